"""Closed-form heat-type kernels and their cancellation identities.

All kernels are evaluated with unit viscosity.  Positions are arrays whose
last axis has length 2; every function broadcasts over the leading axes.

The Oseen-type kernels ``K_ijk`` are the fourth derivatives
``d_1 d_j d_i^perp d_k`` of the Newtonian potential of the heat kernel, with
``d_1^perp = -d_2`` and ``d_2^perp = d_1``.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate

EULER_GAMMA = 0.57721566490153286061

# r^2/4t below which G switches to its Taylor series
G_SERIES_THRESHOLD = 1e-4
_E1_CF_DEPTH = 300


class DomainError(ValueError):
    """Raised when a kernel is evaluated outside its domain."""


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("kernel time argument must be positive")
    return t


def _split_xy(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError(f"positions need a trailing axis of length 2, got {x.shape}")
    return x[..., 0], x[..., 1]


def heat_kernel(x, t):
    """Heat kernel ``exp(-|x|^2/4t) / (4 pi t)``."""
    t = _check_time(t)
    x1, x2 = _split_xy(x)
    return np.exp(-(x1 * x1 + x2 * x2) / (4 * t)) / (4 * np.pi * t)


def heat_kernel_dt(x, t):
    """Time derivative of the heat kernel (equal to its Laplacian)."""
    t = _check_time(t)
    x1, x2 = _split_xy(x)
    q = (x1 * x1 + x2 * x2) / (4 * t)
    return (q - 1) * np.exp(-q) / (4 * np.pi * t * t)


def heat_kernel_second(x, t, axes=(1, 1)):
    """Second spatial derivative ``d_a d_b K`` for ``axes=(a, b)``.

    ``d_2^2 K`` is ``d_1^2 K`` with the coordinates swapped, so that
    ``d_1^2 K + d_2^2 K = d_t K``.
    """
    t = _check_time(t)
    x1, x2 = _split_xy(x)
    a, b = sorted(axes)
    if (a, b) not in ((1, 1), (1, 2), (2, 2)):
        raise ValueError(f"axes must be drawn from {{1, 2}}, got {axes}")
    e = np.exp(-(x1 * x1 + x2 * x2) / (4 * t))
    if (a, b) == (1, 2):
        return x1 * x2 * e / (16 * np.pi * t**3)
    xa = x1 if a == 1 else x2
    return (xa * xa / (2 * t) - 1) * e / (8 * np.pi * t * t)


def ball_integral_d11(R, t):
    """Limit of the space-time integral of ``d_1^2 K`` over ``(0, t) x B_R``."""
    t = _check_time(t)
    R = np.asarray(R, dtype=float)
    if np.any(~(R > 0)):
        raise DomainError("ball radius must be positive")
    return -0.5 * np.exp(-R * R / (4 * t))


def exp1(z):
    """Exponential integral ``E_1(z)`` for ``z > 0``.

    Power series up to ``z = 1``; above, the continued fraction evaluated
    backwards from a fixed depth (accurate to a few ulp for ``z >= 1``).
    """
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise DomainError("E1 is only implemented for positive arguments")
    out = np.empty_like(z)
    small = z <= 1.0

    zs = z[small]
    if zs.size:
        term = np.ones_like(zs)
        acc = np.zeros_like(zs)
        for k in range(1, 40):
            term = term * (-zs) / k
            acc += term / k
        out[small] = -EULER_GAMMA - np.log(zs) - acc

    zl = z[~small]
    if zl.size:
        # fixed-depth backward evaluation of the Laguerre-type fraction
        # 1/(z+1 - 1/(z+3 - 4/(z+5 - ...)))
        f = zl + (2 * _E1_CF_DEPTH + 1)
        for i in range(_E1_CF_DEPTH, 0, -1):
            f = (zl + (2 * i - 1)) - (i * i) / f
        out[~small] = np.exp(-zl) / f
    return out


def inv_laplace_heat(x, t):
    """Newtonian potential of the heat kernel, ``(log|x| + E_1(|x|^2/4t)/2) / 2 pi``."""
    t = _check_time(t)
    x1, x2 = _split_xy(x)
    r2 = x1 * x1 + x2 * x2
    if np.any(r2 == 0):
        raise DomainError("inverse Laplacian of the heat kernel is singular at x = 0")
    return (0.5 * np.log(r2) + 0.5 * exp1(r2 / (4 * t))) / (2 * np.pi)


def g_function(r, t):
    """Radial profile ``G(r, t) = (1 - e^{-s})/r^3 - e^{-s}/(4 t r)``, ``s = r^2/4t``.

    Non-negative.  Below ``s = 1e-4`` a three-term Taylor series replaces the
    cancelling difference; ``G(0, t) = 0``.
    """
    t = _check_time(t)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("G needs a non-negative radius")
    r, t = np.broadcast_arrays(r, t)
    s = r * r / (4 * t)
    out = np.zeros(r.shape)
    ser = s < G_SERIES_THRESHOLD
    rs, ss, ts = r[ser], s[ser], t[ser]
    # (1 - e^{-s} - s e^{-s}) / r^3 = (s^2/2 - s^3/3 + s^4/8 - ...) / r^3
    out[ser] = rs / (32 * ts * ts) * (1.0 - 2.0 * ss / 3.0 + ss * ss / 4.0)
    rd, sd = r[~ser], s[~ser]
    out[~ser] = (-np.expm1(-sd) - sd * np.exp(-sd)) / rd**3
    return out


# -- Oseen-type kernels -------------------------------------------------------

_CANONICAL = {
    (1, 1, 1): ("111", 1.0),
    (1, 1, 2): ("112", 1.0),
    (1, 2, 1): ("112", 1.0),
    (1, 2, 2): ("122", 1.0),
    (2, 1, 1): ("211", 1.0),
    (2, 1, 2): ("111", -1.0),
    (2, 2, 1): ("111", -1.0),
    (2, 2, 2): ("112", -1.0),
}

OSEEN_INDICES = tuple(_CANONICAL)


def parse_index(idx):
    """Normalise ``"112"`` / ``(1, 1, 2)`` to a tuple of ints."""
    if isinstance(idx, str):
        idx = tuple(int(ch) for ch in idx)
    idx = tuple(int(v) for v in idx)
    if idx not in _CANONICAL:
        raise ValueError(f"Oseen index must be three axes in {{1, 2}}, got {idx!r}")
    return idx


def _angular_parts(name, c, s):
    """Angular factors ``(P, Q0, Q1)`` of a canonical kernel.

    ``K = P G / (pi r) - e^{-q} (Q0 + q Q1) / (pi (4t)^2)`` with ``q = r^2/4t``.
    """
    if name == "111":
        return 24 * c**3 * s - 12 * c * s, 12 * c**3 * s - 6 * c * s, 4 * c**3 * s
    if name == "112":
        cs2 = (c * s) ** 2
        return 24 * cs2 - 3, 12 * cs2 - 2, 4 * cs2
    if name == "122":
        return -12 * c * s + 24 * c * s**3, -6 * c * s + 12 * c * s**3, 4 * c * s**3
    # "211"
    return -24 * c**4 + 24 * c**2 - 3, 12 * c**2 - 12 * c**4, -4 * c**4


def oseen_split(idx, r, angle, t):
    """Split ``K_ijk = K* + K^o`` in polar coordinates about the origin.

    ``K^o`` is the ``G`` term, whose mean over every circle vanishes; ``K*``
    is the Gaussian term carrying the non-zero circle mean.

    Returns
    -------
    star, odd : ndarray
    """
    name, sign = _CANONICAL[parse_index(idx)]
    t = _check_time(t)
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise DomainError("Oseen kernels are singular at the origin")
    c, s = np.cos(angle), np.sin(angle)
    p, q0, q1 = _angular_parts(name, c, s)
    q = r * r / (4 * t)
    star = -np.exp(-q) * (q0 + q * q1) / (np.pi * 16 * t * t)
    odd = p * g_function(r, t) / (np.pi * r)
    return sign * star, sign * odd


def oseen_kernel(idx, x, t):
    """Closed-form ``K_ijk(x, t)``."""
    x1, x2 = _split_xy(x)
    r = np.hypot(x1, x2)
    if np.any(r == 0):
        raise DomainError("Oseen kernels are singular at the origin")
    star, odd = oseen_split(idx, r, np.arctan2(x2, x1), t)
    return star + odd


_BALL_FACTOR = {"111": 0.0, "112": 0.125, "122": 0.0, "211": -0.375}


def oseen_ball_integral(idx, R, t):
    """Limit of the space-time integral of ``K_ijk`` over ``(0, t) x B_R``.

    Only the circle mean of ``K*`` contributes: ``e^{-R^2/4t}/8`` for
    ``K_112``, ``-3 e^{-R^2/4t}/8`` for ``K_211`` and zero for ``K_111``,
    ``K_122`` (signs follow the index symmetries).
    """
    name, sign = _CANONICAL[parse_index(idx)]
    t = _check_time(t)
    R = np.asarray(R, dtype=float)
    if np.any(~(R > 0)):
        raise DomainError("ball radius must be positive")
    return sign * _BALL_FACTOR[name] * np.exp(-R * R / (4 * t))


def circle_mean(kernel, r, t, n_angles=512):
    """Trapezoid-rule mean of ``kernel(x, t)`` over the circle of radius ``r``."""
    a = 2 * np.pi * np.arange(n_angles) / n_angles
    pts = r * np.stack([np.cos(a), np.sin(a)], axis=-1)
    return float(np.mean(kernel(pts, t)))


# Gauss-Legendre panels for the radial integrals of the quadrature oracle
_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _radial_profile_integral(kernel, R, tau, n_angles=16):
    # int_0^R r * (int_0^{2pi} kernel dalpha) dr, with r = 2 sqrt(tau) rho
    scale = 2.0 * np.sqrt(tau)
    rho_max = min(R / scale, 14.0)
    n_panels = max(4, int(np.ceil(rho_max / 0.5)))
    edges = np.linspace(0.0, rho_max, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    rho = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    r = scale * rho
    a = 2 * np.pi * (np.arange(n_angles) + 0.5) / n_angles
    pts = r[:, None, None] * np.stack([np.cos(a), np.sin(a)], axis=-1)[None, :, :]
    ang = kernel(pts, tau).mean(axis=1) * 2 * np.pi
    return float(np.sum(w * r * ang) * scale)


def space_time_ball_quadrature(kernel, R, t, eps_factor=1e-6):
    """Quadrature oracle for ``lim_{eps->0} int_eps^t int_{B_R} kernel dy dtau``.

    The angle is integrated by a 16-point trapezoid rule (exact for the
    degree-4 trigonometric dependence of every kernel here), the radius by
    composite Gauss-Legendre in the heat similarity variable, and time by
    adaptive quadrature in ``log tau``.  The ``eps -> 0`` limit is taken by
    Richardson extrapolation over ``eps`` and ``eps/2`` with
    ``eps = eps_factor * t``.
    """

    def over_time(eps):
        f = lambda u: _radial_profile_integral(kernel, R, np.exp(u)) * np.exp(u)
        # split at the time scale where the ball edge is reached
        knot = np.log(min(max(R * R / 4.0, eps * 1.0001), t))
        lo, hi = np.log(eps), np.log(t)
        pieces = [(lo, knot), (knot, hi)] if lo < knot < hi else [(lo, hi)]
        total = 0.0
        for a, b in pieces:
            val, _ = integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
            total += val
        return total

    eps = eps_factor * t
    return 2.0 * over_time(eps / 2.0) - over_time(eps)
