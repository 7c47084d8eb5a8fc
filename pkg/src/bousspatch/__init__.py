"""Numerical laboratory for 2D Boussinesq temperature patches."""

__version__ = "0.1.0"
