"""Periodic-grid field algebra on a square box.

Fields live on an ``n x n`` grid with nodes ``x = (i1 h, i2 h)``, ``h = L/n``,
indexed ``values[i1, i2]``.  Coefficients use the real-to-complex layout of
``numpy.fft.rfft2`` (shape ``(n, n//2 + 1)``).

Velocity follows the gauge ``u = grad^perp Delta^{-1} omega`` with
``grad^perp = (-d_2, d_1)``, so that ``curl u = d_1 u_2 - d_2 u_1 = omega``
for mean-zero ``omega``.  The zero mode of the velocity is set to 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .kernels import DomainError

SNAPSHOT_MAGIC = b"BPL1"
_HEADER = struct.Struct("<4sqdd")

# direct Fourier sums are used up to this many points
DIRECT_SUM_LIMIT = 4096
SPLINE_ORDER = 5


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n`` nodes per side on a box of side ``L``."""

    n: int
    L: float

    def __post_init__(self):
        n = int(self.n)
        if n < 32 or n & (n - 1):
            raise ValueError(f"grid size must be a power of two >= 32, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"box length must be positive, got {self.L}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self):
        return self.L / self.n

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def coeff_shape(self):
        return (self.n, self.n // 2 + 1)

    @cached_property
    def nodes(self):
        """Node coordinates ``(x1, x2)`` as two ``n x n`` arrays."""
        x = self.h * np.arange(self.n)
        return np.meshgrid(x, x, indexing="ij")

    @cached_property
    def index(self):
        """Integer wavenumbers ``(m1, m2)`` broadcastable to the coefficient shape."""
        m1 = np.fft.fftfreq(self.n, 1.0 / self.n)[:, None]
        m2 = np.arange(self.n // 2 + 1, dtype=float)[None, :]
        return m1, m2

    @cached_property
    def wavenumbers(self):
        """Physical wavenumbers ``(k1, k2)``."""
        m1, m2 = self.index
        s = 2 * np.pi / self.L
        return s * m1, s * m2

    @cached_property
    def k_squared(self):
        k1, k2 = self.wavenumbers
        return k1 * k1 + k2 * k2

    @cached_property
    def nyquist_mask(self):
        """True on coefficients that carry a Nyquist index."""
        m1, m2 = self.index
        half = self.n // 2
        return (np.abs(m1) == half) | (m2 == half)

    @cached_property
    def dealias_mask(self):
        """True on coefficients kept by the two-thirds rule."""
        m1, m2 = self.index
        cut = self.n / 3
        return (np.abs(m1) <= cut) & (m2 <= cut)

    @cached_property
    def column_weight(self):
        """Multiplicity of each rfft column in a full Fourier sum."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w


class SpectralField:
    """Real periodic scalar field with lazily synchronized node values and coefficients.

    Construct with :meth:`from_values` or :meth:`from_coeffs`.  Instances are
    treated as immutable; the arrays returned by :attr:`values` and
    :attr:`coeffs` are read-only.
    """

    __slots__ = ("grid", "_values", "_coeffs")

    def __init__(self, grid, values=None, coeffs=None):
        if values is None and coeffs is None:
            raise ValueError("need node values or coefficients")
        self.grid = grid
        self._values = None
        self._coeffs = None
        if values is not None:
            values = np.array(values, dtype=float)
            if values.shape != grid.shape:
                raise ValueError(f"values have shape {values.shape}, grid needs {grid.shape}")
            values.flags.writeable = False
            self._values = values
        if coeffs is not None:
            coeffs = np.array(coeffs, dtype=complex)
            if coeffs.shape != grid.coeff_shape:
                raise ValueError(f"coefficients have shape {coeffs.shape}, grid needs {grid.coeff_shape}")
            coeffs.flags.writeable = False
            self._coeffs = coeffs

    @classmethod
    def from_values(cls, grid, values):
        return cls(grid, values=values)

    @classmethod
    def from_coeffs(cls, grid, coeffs):
        return cls(grid, coeffs=coeffs)

    @classmethod
    def from_function(cls, grid, func):
        """Sample ``func(x1, x2)`` at the grid nodes."""
        x1, x2 = grid.nodes
        return cls(grid, values=np.broadcast_to(func(x1, x2), grid.shape))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, values=np.zeros(grid.shape))

    @property
    def values(self):
        if self._values is None:
            v = np.fft.irfft2(self._coeffs, s=self.grid.shape)
            v.flags.writeable = False
            self._values = v
        return self._values

    @property
    def coeffs(self):
        if self._coeffs is None:
            c = np.fft.rfft2(self._values)
            c.flags.writeable = False
            self._coeffs = c
        return self._coeffs

    def _with_coeffs(self, coeffs):
        return SpectralField(self.grid, coeffs=coeffs)

    def __add__(self, other):
        return self._with_coeffs(self.coeffs + _coeffs_of(other, self.grid))

    def __sub__(self, other):
        return self._with_coeffs(self.coeffs - _coeffs_of(other, self.grid))

    def __neg__(self):
        return self._with_coeffs(-self.coeffs)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            return SpectralField(self.grid, values=self.values * scalar.values)
        return self._with_coeffs(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def mean(self):
        return self.coeffs[0, 0].real / self.grid.n**2

    def l2_norm(self):
        """``(int |f|^2 dx)^{1/2}`` from node values."""
        return np.sqrt(np.sum(self.values**2) * self.grid.h**2)

    def l2_norm_spectral(self):
        """Same norm from coefficients via Parseval."""
        w = self.grid.column_weight
        s = np.sum(w * np.abs(self.coeffs) ** 2)
        return np.sqrt(s * self.grid.L**2) / self.grid.n**2

    def sup_norm(self):
        return float(np.max(np.abs(self.values)))

    def __repr__(self):
        return f"SpectralField(n={self.grid.n}, L={self.grid.L})"


def _coeffs_of(other, grid):
    if isinstance(other, SpectralField):
        if other.grid != grid:
            raise ValueError("fields live on different grids")
        return other.coeffs
    raise TypeError("only fields of the same grid can be combined")


def derivative(f, axis):
    """Spectral derivative along ``axis`` (1 or 2); the Nyquist modes are zeroed."""
    k1, k2 = f.grid.wavenumbers
    if axis == 1:
        k = k1
    elif axis == 2:
        k = k2
    else:
        raise ValueError(f"axis must be 1 or 2, got {axis}")
    c = 1j * k * f.coeffs
    c[np.broadcast_to(f.grid.nyquist_mask, c.shape)] = 0
    return f._with_coeffs(c)


def inverse_laplacian(f):
    """``Delta^{-1} f`` with the zero mode set to 0."""
    ksq = f.grid.k_squared
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(ksq > 0, -f.coeffs / np.where(ksq > 0, ksq, 1.0), 0.0)
    return f._with_coeffs(c)


def biot_savart(omega):
    """Velocity ``(u1, u2)`` of a vorticity field.

    The mean of ``omega`` is discarded; the returned velocity has zero mean.
    """
    psi = inverse_laplacian(omega)
    u1 = -derivative(psi, 2)
    u2 = derivative(psi, 1)
    return u1, u2


def curl(u1, u2):
    return derivative(u2, 1) - derivative(u1, 2)


def divergence(u1, u2):
    return derivative(u1, 1) + derivative(u2, 2)


def heat_semigroup(f, t):
    """Apply ``e^{t Delta}``; ``t = 0`` returns ``f`` unchanged."""
    if not t >= 0:
        raise DomainError(f"heat semigroup needs t >= 0, got {t}")
    if t == 0:
        return f
    return f._with_coeffs(f.coeffs * np.exp(-t * f.grid.k_squared))


def dealias(f):
    """Two-thirds rule projection."""
    return f._with_coeffs(f.coeffs * f.grid.dealias_mask)


def evaluate_at_points(f, pts, method=None):
    """Evaluate a field at arbitrary points.

    Parameters
    ----------
    f : SpectralField
    pts : array_like, shape (m, 2)
    method : {None, "direct", "spline"}
        ``None`` picks the exact Fourier sum for at most
        ``DIRECT_SUM_LIMIT`` points and quintic B-spline interpolation of the
        node values otherwise.

    Returns
    -------
    values : ndarray, shape (m,)
    method : str
        The method that was used.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if method is None:
        method = "direct" if len(pts) <= DIRECT_SUM_LIMIT else "spline"
    if method == "direct":
        return _direct_sum(f, pts), method
    if method == "spline":
        coords = pts.T / f.grid.h
        vals = ndimage.map_coordinates(f.values, coords, order=SPLINE_ORDER, mode="grid-wrap")
        return vals, method
    raise ValueError(f"unknown evaluation method {method!r}")


def evaluate_many(fields, pts, method=None):
    """Evaluate several fields of one grid at the same points.

    Returns an array of shape ``(len(fields), m)`` and the method used.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if method is None:
        method = "direct" if len(pts) <= DIRECT_SUM_LIMIT else "spline"
    if method == "direct":
        return _direct_sum(fields, pts), method
    return np.array([evaluate_at_points(f, pts, method)[0] for f in fields]), method


def _direct_sum(fields, pts):
    if isinstance(fields, SpectralField):
        return _direct_sum([fields], pts)[0]
    g = fields[0].grid
    k1, k2 = g.wavenumbers
    half = g.n // 2
    w = g.column_weight / g.n**2
    c = np.concatenate([f.coeffs * w for f in fields], axis=1)
    e1 = np.exp(1j * pts[:, 0:1] * k1[:, 0])
    e2 = np.exp(1j * pts[:, 1:2] * k2[0])
    # symmetric interpolant for the Nyquist index, exact at nodes
    e1[:, half] = np.cos(np.pi * pts[:, 0] / g.h)
    e2[:, half] = np.cos(np.pi * pts[:, 1] / g.h)
    r = (e1 @ c).reshape(len(pts), len(fields), -1)
    return np.real(np.einsum("mfk,mk->fm", r, e2))


def write_snapshot(path, f, time=0.0):
    """Write node values in the binary snapshot layout."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, f.grid.n, f.grid.L, float(time)))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_snapshot(path):
    """Read a field written by :func:`write_snapshot`; returns ``(field, time)``."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, n, L, time = _HEADER.unpack(head)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"not a field snapshot: magic {magic!r}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    grid = Grid(n, L)
    if data.size != n * n:
        raise ValueError(f"snapshot holds {data.size} values, expected {n * n}")
    return SpectralField.from_values(grid, data.reshape(n, n)), time
