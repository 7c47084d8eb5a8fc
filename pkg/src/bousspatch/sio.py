"""Principal-value evaluation of the singular temperature operators.

The operators are space-time convolutions of ``theta`` with

* ``d_k d_1 K`` (heat kernel ``K``), giving ``d_k omega_3``, and
* the Oseen-type kernels ``K_ijk``, giving ``(nabla^2 v_3)_ijk``.

Both are written in polar coordinates ``z = r e^{i alpha}`` about the probe
as a finite sum of radial profiles times angular harmonics,

    k(z, s) = sum_p P_p(r, s) sum_{|m| <= 4} c_pm e^{i m alpha},

with ``P_0 = e^{-q}/s^2``, ``P_1 = q e^{-q}/s^2``, ``P_2 = G(r, s)/r`` and
``q = r^2/4s``.  The integral is split with a smooth radial partition
``chi``:

* near zone: angular moments of ``theta`` on circles about the probe, minus
  the value at the probe, against the radial profiles.  The subtracted
  circle-mean part is the one that needs the principal value and is
  integrated in closed form.  The moments come either from the rasterized
  ``theta`` (default, the field the spectral solver sees) or exactly from
  circle/contour crossings of the sharp patch;
* far zone: grid quadrature of the rasterized ``theta`` in space and Gauss
  panels in log-time, with the periodic images of the box.  The ``K^o``
  tails decay like ``r^-4``; beyond the nearest images they are summed with
  their time-independent limit against the time integral of ``theta``.

``bound_ledger`` measures the pieces ``J_1 .. J_4`` of the near-zone integral
of ``d_1^2 K`` used in the case analysis and evaluates their closed-form
bounds.
"""

import math
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.ndimage import map_coordinates, spline_filter

from . import geometry as geo
from . import kernels as kn

MIN_SNAPSHOTS = 100
NEAR_CELLS = 6.0
IMAGE_RANGE = 8
M_MAX = 4
TWO_PI = 2 * np.pi
RASTER_ANGLES = 128
SUPPORT_FLOOR = 1e-13

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL16_X, _GL16_W = np.polynomial.legendre.leggauss(16)


class NearBoundaryWarning(UserWarning):
    """Probe closer to the boundary than one raster width."""


# -- harmonic kernels ---------------------------------------------------------

@dataclass(frozen=True)
class HarmonicKernel:
    """Kernel ``sum_p P_p(r, s) sum_m c_pm e^{i m alpha}``.

    ``coef[p, 0] = c_p0`` and ``coef[p, m] = 2 c_pm`` for ``m >= 1``, so that
    the kernel is ``Re sum_p P_p sum_m coef[p, m] e^{i m alpha}``.
    """

    name: str
    coef: np.ndarray

    @property
    def mean_weight(self):
        """Coefficient ``b`` of the circle mean ``b (q - 1) e^{-q}/s^2``."""
        return float(self.coef[1, 0].real)

    @property
    def has_tail(self):
        return bool(np.any(self.coef[2] != 0))

    def angular(self, w):
        """Angular factors ``(3, ...)`` at unit complex directions ``w``."""
        pw = np.stack([w**m for m in range(M_MAX + 1)])
        return np.real(np.tensordot(self.coef, pw, axes=(1, 0)))

    def __call__(self, z, s):
        """Kernel values at displacements ``z`` (``..., 2``) and lag ``s``."""
        z = np.asarray(z, dtype=float)
        r = np.hypot(z[..., 0], z[..., 1])
        a = self.angular((z[..., 0] + 1j * z[..., 1]) / r)
        return np.sum(a * _profiles(r, s), axis=0)

    def static(self, z):
        """Limit of the kernel as ``s -> 0`` at fixed ``z != 0``."""
        z = np.asarray(z, dtype=float)
        r = np.hypot(z[..., 0], z[..., 1])
        a = self.angular((z[..., 0] + 1j * z[..., 1]) / r)
        return a[2] / r**4


def _harmonics(funcs, n=16):
    """Half spectrum ``(3, M_MAX + 1)`` of three angular functions."""
    a = TWO_PI * np.arange(n) / n
    c, s = np.cos(a), np.sin(a)
    coef = np.zeros((3, M_MAX + 1), dtype=complex)
    for p, f in enumerate(funcs):
        vals = np.broadcast_to(np.asarray(f(c, s), dtype=float), a.shape)
        spec = np.fft.fft(vals) / n
        coef[p, 0] = spec[0].real
        coef[p, 1:] = 2 * spec[1:M_MAX + 1]
    coef[np.abs(coef) < 1e-14] = 0
    return coef


def _profiles(r, s):
    """Radial profiles ``(P_0, P_1, P_2)`` stacked on a leading axis."""
    r = np.asarray(r, dtype=float)
    q = r * r / (4 * s)
    e = np.exp(-q)
    g = kn.g_function(r, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        p2 = np.where(r > 0, g / np.where(r > 0, r, 1.0), 0.0)
    return np.stack(np.broadcast_arrays(e / (s * s), q * e / (s * s), p2))


def kernel(name):
    """Harmonic form of ``"d1"`` (``d_1 d_1 K``), ``"d2"`` (``d_2 d_1 K``) or ``"ijk"``."""
    name = str(name)
    if name not in _KERNELS:
        cname, sign = kn._CANONICAL[kn.parse_index(name)]

        def part(k):
            return lambda c, s: sign * kn._angular_parts(cname, c, s)[k]

        coef = _harmonics([lambda c, s: -part(1)(c, s) / (16 * np.pi),
                           lambda c, s: -part(2)(c, s) / (16 * np.pi),
                           lambda c, s: part(0)(c, s) / np.pi])
        _KERNELS[name] = HarmonicKernel(name, coef)
    return _KERNELS[name]


_KERNELS = {
    "d1": HarmonicKernel("d1", _harmonics([lambda c, s: -1 / (8 * np.pi) + 0 * c,
                                           lambda c, s: c * c / (4 * np.pi),
                                           lambda c, s: 0 * c])),
    "d2": HarmonicKernel("d2", _harmonics([lambda c, s: 0 * c,
                                           lambda c, s: c * s / (4 * np.pi),
                                           lambda c, s: 0 * c])),
}


# -- boundary geometry on circles ----------------------------------------------

def _segments(poly, x):
    p = poly - x
    e = np.roll(poly, -1, axis=0) - poly
    ee = np.einsum("ij,ij->i", e, e)
    pe = np.einsum("ij,ij->i", p, e)
    lam = np.clip(-pe / ee, 0.0, 1.0)
    near = p + lam[:, None] * e
    dmin = np.hypot(near[:, 0], near[:, 1])
    return p, e, ee, pe, dmin, near


def polyline_distance(x, poly):
    """Distance from ``x`` to a closed polyline and the nearest point."""
    x = np.asarray(x, dtype=float)
    *_, dmin, near = _segments(poly, x)
    k = int(np.argmin(dmin))
    return float(dmin[k]), x + near[k]


def circle_events(x, radii, poly, orientation):
    """Crossings of the circles ``|y - x| = r`` with a closed polyline.

    Returns
    -------
    ridx, angle, jump : ndarray
        Radius index, crossing angle in ``[0, 2 pi)`` and the jump of the
        patch indicator when the angle increases through the crossing.
    """
    radii = np.asarray(radii, dtype=float)
    p, e, ee, pe, dmin, _ = _segments(poly, x)
    rho = np.hypot(p[:, 0], p[:, 1])
    dmax = np.maximum(rho, np.roll(rho, -1))
    keep = (dmin <= radii.max()) & (dmax >= radii.min())
    p, e, ee, pe, dmin, dmax = p[keep], e[keep], ee[keep], pe[keep], dmin[keep], dmax[keep]
    i, j = np.nonzero((dmin[:, None] <= radii[None, :]) & (radii[None, :] <= dmax[:, None]))
    if i.size == 0:
        return np.zeros(0, int), np.zeros(0), np.zeros(0)
    pi_, ei, eei, pei = p[i], e[i], ee[i], pe[i]
    pp = np.einsum("ij,ij->i", pi_, pi_)
    sq = np.sqrt(np.maximum(pei * pei - eei * (pp - radii[j] ** 2), 0.0))
    out = []
    for sgn in (-1.0, 1.0):
        lam = (-pei + sgn * sq) / eei
        ok = (lam >= 0) & (lam < 1)
        w = pi_[ok] + lam[ok, None] * ei[ok]
        ang = np.mod(np.arctan2(w[:, 1], w[:, 0]), TWO_PI)
        # moving counterclockwise on the circle enters the patch when the
        # edge points away from the centre (interior on the left)
        jump = orientation * np.sign(np.einsum("ij,ij->i", ei[ok], w))
        out.append((j[ok], ang, jump))
    ridx, ang, jump = (np.concatenate(v) for v in zip(*out))
    nz = jump != 0
    return ridx[nz], ang[nz], jump[nz]


def arc_moments(n_r, ridx, ang, jump, start, lo=0.0, span=TWO_PI):
    """Moments ``int e^{i m alpha}`` of ``S_r`` restricted to ``[lo, lo + span]``.

    ``start`` is the patch indicator at angle 0 on each circle.  Returns a
    complex ``(n_r, M_MAX + 1)`` array.
    """
    lo = float(np.mod(lo, TWO_PI))
    start = np.asarray(start, dtype=float)
    f_lo = start + np.bincount(ridx[ang < lo], jump[ang < lo], minlength=n_r)
    a = np.mod(ang - lo, TWO_PI)
    keep = a < span
    rk, ak, jk = ridx[keep], a[keep], jump[keep]
    f_end = f_lo + np.bincount(rk, jk, minlength=n_r)
    out = np.empty((n_r, M_MAX + 1), dtype=complex)
    out[:, 0] = span * f_end - np.bincount(rk, ak * jk, minlength=n_r)
    for m in range(1, M_MAX + 1):
        ev = np.exp(1j * m * ak) * jk
        acc = (np.bincount(rk, ev.real, minlength=n_r)
               + 1j * np.bincount(rk, ev.imag, minlength=n_r))
        val = np.exp(1j * m * span) * f_end - f_lo - acc
        out[:, m] = val / (1j * m) * np.exp(1j * m * lo)
    return out


def half_circle_moments(lo):
    """Moments of the half circle ``[lo, lo + pi]``."""
    out = np.empty(M_MAX + 1, dtype=complex)
    out[0] = np.pi
    m = np.arange(1, M_MAX + 1)
    out[1:] = np.exp(1j * m * lo) * (np.exp(1j * m * np.pi) - 1) / (1j * m)
    return out


def _kernel_moment_sum(kern, prof, mom):
    """``Re sum_p P_p sum_m coef_pm M_m`` for radii along the first axis."""
    return np.real(np.einsum("pr,pm,rm->r", prof, kern.coef, mom))


# -- prepared history ------------------------------------------------------------

def _contours_of(snap):
    c = snap.contour
    if c is None:
        return []
    if isinstance(c, geo.Contour):
        return [c]
    return list(c)


class _History:
    """Snapshot data up to time ``t`` in the form the quadratures need."""

    def __init__(self, h, t):
        k = h.index(t)
        if k + 1 < MIN_SNAPSHOTS:
            raise ValueError(f"principal values need at least {MIN_SNAPSHOTS} snapshots "
                             f"in [0, t], got {k + 1}")
        self.h = h
        self.t = float(h.snapshots[k].time)
        self.snaps = h.snapshots[:k + 1]
        self.times = np.array([s.time for s in self.snaps])
        self.grid = self.snaps[0].theta.grid
        cfg = h.config
        self.raster_width = cfg.raster_width if cfg is not None else 2.0
        self.gravity = cfg.gravity if cfg is not None else 1.0
        self.polys = []
        for s in self.snaps:
            self.polys.append([(geo._polyline(c)[0], c.orientation) for c in _contours_of(s)])
        self._values = {}
        self._coeffs = {}
        self._support = None

    def values(self, k):
        if k not in self._values:
            if len(self._values) > 4:
                self._values.clear()
            self._values[k] = self.snaps[k].theta.values
        return self._values[k]

    def coeffs(self, k):
        """Cubic spline coefficients of snapshot ``k``, periodic in both axes."""
        if k not in self._coeffs:
            if len(self._coeffs) > 8:
                self._coeffs.pop(next(iter(self._coeffs)))
            self._coeffs[k] = spline_filter(self.values(k), order=3, mode="grid-wrap")
        return self._coeffs[k]

    def bracket(self, tau):
        """Snapshot indices and weight for linear interpolation at ``tau``."""
        k = int(np.clip(np.searchsorted(self.times, tau) - 1, 0, len(self.times) - 2))
        w = (tau - self.times[k]) / (self.times[k + 1] - self.times[k])
        return k, float(np.clip(w, 0.0, 1.0))

    def polys_at(self, tau):
        k, w = self.bracket(tau)
        a, b = self.snaps[k], self.snaps[k + 1]
        pa, pb = self.polys[k], self.polys[k + 1]
        if (a.epoch == b.epoch and len(pa) == len(pb)
                and all(u[0].shape == v[0].shape for u, v in zip(pa, pb))):
            return [((1 - w) * u[0] + w * v[0], u[1]) for u, v in zip(pa, pb)]
        return pa if w < 0.5 else pb

    def distance(self, x, polys):
        """Distance to the boundary, nearest point and membership of ``x``."""
        best, near = np.inf, None
        inside = 0
        for poly, _ in polys:
            d, z = polyline_distance(x, poly)
            if d < best:
                best, near = d, z
            inside += int(geo._winding_numbers(x[None, :], poly)[0] != 0)
        return best, near, inside

    def distances(self, x):
        """Per-snapshot distance and membership of ``x``."""
        d = np.empty(len(self.snaps))
        inside = np.empty(len(self.snaps), dtype=int)
        for k, polys in enumerate(self.polys):
            d[k], _, inside[k] = self.distance(x, polys)
        return d, inside

    @property
    def support(self):
        """Grid points where ``theta`` is non-zero at some snapshot and their values."""
        if self._support is None:
            vals = np.stack([s.theta.values.ravel() for s in self.snaps])
            # coefficient round trips leave ~1e-17 noise outside the raster band
            mask = np.any(np.abs(vals) > SUPPORT_FLOOR, axis=0)
            vals = np.where(np.abs(vals) > SUPPORT_FLOOR, vals, 0.0)
            x1, x2 = self.grid.nodes
            pts = np.stack([x1.ravel()[mask], x2.ravel()[mask]], axis=-1)
            self._support = (pts, vals[:, mask])
        return self._support

    def theta_support_at(self, tau):
        _, vals = self.support
        k, w = self.bracket(tau)
        return (1 - w) * vals[k] + w * vals[k + 1]

    def raster_at(self, tau, pts):
        """Rasterized ``theta`` at arbitrary points, cubic in space, linear in time."""
        k, w = self.bracket(tau)
        coords = np.asarray(pts, dtype=float).reshape(-1, 2).T / self.grid.h
        out = 0.0
        for kk, ww in ((k, 1 - w), (k + 1, w)):
            if ww > 0:
                out = out + ww * map_coordinates(self.coeffs(kk), coords, order=3,
                                                 mode="grid-wrap", prefilter=False)
        return np.asarray(out).reshape(np.shape(pts)[:-1])


# -- quadrature nodes ------------------------------------------------------------

def _log_time_nodes(lo, hi, refine=1):
    """Gauss nodes and weights on ``[lo, hi]`` in panels of unit width in ``log s``."""
    lo = min(lo, hi * np.exp(-1.0))
    n = int(np.ceil(np.log(hi / lo)))
    edges = np.exp(np.linspace(np.log(lo), np.log(hi), n * refine + 1))
    gx, gw = (_GL16_X, _GL16_W) if refine > 1 else (_GL_X, _GL_W)
    a, b = np.log(edges[:-1])[:, None], np.log(edges[1:])[:, None]
    u = 0.5 * (a + b) + 0.5 * (b - a) * gx
    s = np.exp(u)
    return s.ravel(), (0.5 * (b - a) * gw * s).ravel()


def _radial_nodes(r0, r1, scale, refine=1):
    """Gauss nodes on ``[r0, r1]`` graded towards ``r0``.

    The first panel of width ``~scale`` uses ``rho = rho_1 u^2`` to absorb the
    square-root onset of the arc measure at the first tangency.
    """
    span = r1 - r0
    if span <= 0:
        return np.zeros(0), np.zeros(0)
    gx, gw = (_GL16_X, _GL16_W) if refine > 1 else (_GL_X, _GL_W)
    rho1 = float(np.clip(scale, span * 2.0**-30, span))
    u = 0.5 * (gx + 1)
    nodes = [rho1 * u * u]
    weights = [rho1 * 2 * u * 0.5 * gw]
    a = rho1
    while a < span:
        b = min(2 * a, span)
        nodes.append(0.5 * (a + b) + 0.5 * (b - a) * gx)
        weights.append(0.5 * (b - a) * gw)
        a = b
    return r0 + np.concatenate(nodes), np.concatenate(weights)


# -- radial partition -------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    """Radial cutoff: 1 below ``inner``, 0 beyond ``outer`` (sharp when equal)."""

    inner: float
    outer: float

    @property
    def sharp(self):
        return self.outer <= self.inner

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.sharp:
            return (r <= self.inner).astype(float)
        u = np.clip((r - self.inner) / (self.outer - self.inner), 0.0, 1.0)
        with np.errstate(divide="ignore", over="ignore"):
            a = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1 - u, 1.0)), 0.0)
            b = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        return a / (a + b)

    def mean_part(self, t):
        """``int_0^inf chi'(r) e^{-r^2/4t} dr``."""
        if self.sharp:
            return -math.exp(-self.inner**2 / (4 * t))
        # integrate by parts: -1 + int chi (r/2t) e^{-r^2/4t} dr
        val = -math.exp(-self.inner**2 / (4 * t))
        r = 0.5 * (self.inner + self.outer) + 0.5 * (self.outer - self.inner) * _GL16_X
        g = self(r) * r / (2 * t) * np.exp(-r * r / (4 * t))
        return val + 0.5 * (self.outer - self.inner) * float(np.dot(_GL16_W, g))


def default_partition(grid):
    r = NEAR_CELLS * grid.h
    return Partition(r, 2 * r)


# -- near zone ----------------------------------------------------------------------

def _check_probe(x, H):
    L = H.grid.L
    if np.any(x < L / 4) or np.any(x > 3 * L / 4):
        raise ValueError(f"probe {tuple(x)} is closer than L/4 to the box edge")


def _membership(x, H):
    d, inside = H.distances(x)
    if len(H.polys[-1]) == 0 and all(len(p) == 0 for p in H.polys):
        # no boundary anywhere: the raster decides whether the probe is covered
        inside = np.array([H.raster_at(tau, x[None, :])[0] >= 0.5 for tau in H.times], dtype=int)
        return d, inside, int(inside[-1])
    if np.any(inside != inside[-1]):
        raise ValueError("the patch boundary crosses the probe in [0, t]")
    return d, inside, int(inside[-1])


def near_zone(x, t, h, names, chi=None, method="contour", _H=None):
    """Near-zone integral ``int int chi(|z|) k(z, s) theta(x - z, t - s)``.

    ``method="contour"`` uses the sharp patch bounded by the contours;
    ``method="raster"`` integrates the rasterized ``theta`` on the same
    circles (trapezoid in angle).  Returns one value per kernel name.
    """
    H = _H or _History(h, t)
    x = np.asarray(x, dtype=float)
    chi = chi or default_partition(H.grid)
    kerns = [kernel(n) for n in names]
    d_snap, _, theta_x = _membership(x, H)
    if method == "raster":
        theta_x = float(H.raster_at(H.t, x[None, :])[0])
    R = chi.outer if not chi.sharp else chi.inner
    eps = float(np.min(d_snap)) if np.isfinite(np.min(d_snap)) else np.inf
    refine = 1
    if eps < H.raster_width * H.grid.h:
        warnings.warn(f"probe {tuple(x)} is within one raster width of the boundary; "
                      "using refined near-zone quadrature", NearBoundaryWarning, stacklevel=3)
        refine = 2
    # circle-mean part: b (q - 1) e^{-q}/s^2 integrated in closed form
    out = np.array([theta_x * 4 * np.pi * k.mean_weight * chi.mean_part(H.t) for k in kerns])
    if method == "contour" and eps >= R:
        return out
    floor = eps if (method == "contour" and eps > 0) else H.grid.h * 1e-3
    s_nodes, s_w = _log_time_nodes(floor * floor / 400, H.t, refine)
    a = TWO_PI * np.arange(RASTER_ANGLES) / RASTER_ANGLES
    harm = np.exp(1j * np.outer(a, np.arange(M_MAX + 1))) * (TWO_PI / RASTER_ANGLES)
    for s, ws in zip(s_nodes, s_w):
        tau = H.t - s
        if method == "contour":
            polys = H.polys_at(tau)
            if not polys:
                continue
            d = min(polyline_distance(x, p)[0] for p, _ in polys)
            if d >= R:
                continue
            scale = min(np.sqrt(s), 2 * s / max(d, 1e-300))
            r, wr = _radial_nodes(d, R, scale, refine)
            mom = np.zeros((len(r), M_MAX + 1), dtype=complex)
            for poly, orient in polys:
                ev = circle_events(x, r, poly, orient)
                start = geo._winding_numbers(x + np.outer(r, [1.0, 0.0]), poly) != 0
                mom += arc_moments(len(r), *ev, start)
        else:
            r, wr = _radial_nodes(0.0, R, np.sqrt(s), refine)
            pts = x + r[:, None, None] * np.stack([np.cos(a), np.sin(a)], axis=-1)[None]
            mom = H.raster_at(tau, pts) @ harm
        mom[:, 0] -= TWO_PI * theta_x
        prof = _profiles(r, s)
        wt = ws * wr * r * chi(r)
        for i, k in enumerate(kerns):
            out[i] += np.dot(wt, _kernel_moment_sum(k, prof, mom))
    return out


# -- far zone ---------------------------------------------------------------------------

def far_zone(x, t, h, names, chi=None, _H=None):
    """Far-zone integral ``int int (1 - chi(|z|)) k(z, s) theta(x - z, t - s)``.

    Grid quadrature over the rasterized ``theta`` including periodic images.
    """
    H = _H or _History(h, t)
    x = np.asarray(x, dtype=float)
    chi = chi or default_partition(H.grid)
    kerns = [kernel(n) for n in names]
    pts, vals = H.support
    if pts.size == 0:
        return np.zeros(len(kerns))
    L, h2 = H.grid.L, H.grid.h ** 2
    z_all = x - pts
    ring = np.array([(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0)], float)
    r_all = np.hypot(z_all[:, 0], z_all[:, 1])
    act = r_all > chi.inner
    z0 = z_all[act]
    zi = (z_all[None] - L * ring[:, None, :]).reshape(-1, 2)
    r0, ri = r_all[act], np.hypot(zi[:, 0], zi[:, 1])
    w0 = 1 - chi(r0)
    # angular factors do not depend on the lag: (kernels, profiles, points)
    a0 = np.stack([k.angular((z0[:, 0] + 1j * z0[:, 1]) / r0) for k in kerns]) * w0
    ai = np.stack([k.angular((zi[:, 0] + 1j * zi[:, 1]) / ri) for k in kerns])
    nk = len(kerns)
    a0, ai = a0.reshape(nk, -1), ai.reshape(nk, -1)
    out = np.zeros(nk)
    for s, ws in zip(*_log_time_nodes(chi.inner ** 2 / 400, H.t)):
        th = H.theta_support_at(H.t - s)
        p0 = _profiles(r0, s) * th[act]
        pi_ = _profiles(ri, s)
        # nearest images: the static r^-4 tail is summed separately below
        pi_[2] -= ri ** -4.0
        pi_ = pi_ * np.tile(th, len(ring))
        out += ws * h2 * (a0 @ p0.ravel() + ai @ pi_.ravel())
    tails = [i for i, k in enumerate(kerns) if k.has_tail]
    if tails:
        big = np.array([(a, b) for a in range(-IMAGE_RANGE, IMAGE_RANGE + 1)
                        for b in range(-IMAGE_RANGE, IMAGE_RANGE + 1)], float)
        big = big[np.max(np.abs(big), axis=1) >= 1]
        theta_int = np.trapezoid(vals, H.times, axis=0)
        keep = theta_int != 0
        zt, wt = z_all[keep], theta_int[keep]
        for chunk in np.array_split(big, 8):
            z = (zt[None] - L * chunk[:, None, :]).reshape(-1, 2)
            r = np.hypot(z[:, 0], z[:, 1])
            w = (z[:, 0] + 1j * z[:, 1]) / r
            wr = np.tile(wt, len(chunk)) / r**4
            for i in tails:
                out[i] += h2 * np.dot(kerns[i].angular(w)[2], wr)
    return out


# -- public operators -------------------------------------------------------------

@dataclass(frozen=True)
class PvValue:
    """Near, far and total parts of one principal-value evaluation."""

    name: str
    near: float
    far: float

    @property
    def total(self):
        return self.near + self.far


def pv_evaluate(x, t, h, names, method="raster"):
    """Principal values of several kernels against ``theta`` at one probe.

    Values include the gravity factor of the run.
    """
    x = np.asarray(x, dtype=float)
    H = _History(h, t)
    _check_probe(x, H)
    chi = default_partition(H.grid)
    near = near_zone(x, t, h, names, chi, method, _H=H) * H.gravity
    far = far_zone(x, t, h, names, chi, _H=H) * H.gravity
    return {n: PvValue(n, float(a), float(b)) for n, a, b in zip(names, near, far)}


def grad_omega3_pv(x, t, h, axis):
    """``d_axis omega_3(x, t)`` by direct principal-value quadrature."""
    if axis not in (1, 2):
        raise ValueError(f"axis must be 1 or 2, got {axis}")
    name = f"d{axis}"
    return pv_evaluate(x, t, h, [name])[name].total


def hessian_v3_pv(x, t, h, idx):
    """``(nabla^2 v_3)_ijk(x, t) = d_k d_j (v_3)_i`` by principal-value quadrature."""
    name = "".join(str(i) for i in kn.parse_index(idx))
    return pv_evaluate(x, t, h, [name])[name].total


# -- bound ledger -------------------------------------------------------------------

@dataclass(frozen=True)
class BoundLedger:
    """Measured pieces of the near-zone integral and their closed-form bounds."""

    x: tuple
    t: float
    d_t: float
    eps: float
    U: float
    delta: float
    t_star: float
    case: int
    J1: float
    J2: float
    J3: float
    J4: float
    J1_bound: float
    J2_bound: float
    J3_bound: float
    J4_bound: float
    I1: float
    I1_bound: float

    @property
    def checks(self):
        return {f"J{i}": getattr(self, f"J{i}") <= getattr(self, f"J{i}_bound")
                for i in range(1, 5)}

    @property
    def passed(self):
        return all(self.checks.values())

    def row(self):
        """Flat CSV row, the probe split into ``x1, x2``."""
        d = asdict(self)
        x1, x2 = d.pop("x")
        return {"x1": x1, "x2": x2, **d}


LEDGER_COLUMNS = ("x1", "x2") + tuple(f.name for f in fields(BoundLedger))[1:]


def case1_bounds(U, t, delta, gamma):
    """Bounds on ``J_1 .. J_4`` when ``d(x, t) <= 2 eps``."""
    g = 2.0**gamma / gamma
    rt = math.sqrt(t)
    return (4 + U * U * t / 4,
            2 + U * U * t / 8,
            36 + 6 * g + 9 * U * math.sqrt(2 * np.pi) / 2 * rt,
            81 + g / 4 + 27 * U * math.sqrt(np.pi) / 2 * rt + U * t / (2 * delta))


def case2_bounds(U, t, delta, gamma):
    """Bounds on ``J_1 .. J_4`` when ``d(x, t) >= 2 eps``."""
    g = 2.0**gamma / gamma
    rt = math.sqrt(t)
    return (4.5 + U * delta + U * U * t / 4,
            2.5 + U * delta / 2 + U * U * t / 8,
            13.5 + 12 * g + 9 * U * delta + 9 * U * math.sqrt(2 * np.pi) / 2 * rt,
            54 * (4.5 + 1.5 * delta * U + U * math.sqrt(np.pi) / 4 * rt
                  + U * t / (4 * delta) + g / 4))


def i1_bound(t, delta):
    """Bound on the far part ``|x - y| >= delta`` of ``d_1 omega_3``."""
    if not np.isfinite(delta):
        return 0.0
    return (4 * t / delta**2 + 0.5) * math.exp(-delta**2 / (4 * t))


def _running_delta(H, gamma):
    # the history is kept alongside so a recycled id can never match
    key = (id(H.h), H.t, gamma)
    hit = _DELTA_CACHE.get(key)
    if hit is None or hit[0] is not H.h:
        _DELTA_CACHE.clear()
        hit = _DELTA_CACHE[key] = (H.h, _running_delta_uncached(H, gamma))
    return hit[1]


_DELTA_CACHE = {}


def _running_delta_uncached(H, gamma):
    vals = [geo.regularity_stats(c, gamma).delta for s in H.snaps for c in _contours_of(s)]
    return float(min(vals)) if vals else np.inf


def _ball_profile(d, s):
    """``int_0^d (r/4s^2)(r^2/4s - 1) e^{-r^2/4s} dr = -(d^2/8s^2) e^{-d^2/4s}``."""
    return -(d * d) / (8 * s * s) * np.exp(-d * d / (4 * s))


def bound_ledger(x, t, h, gamma):
    """Measured ``J_1 .. J_4`` and ``I_1`` at probe ``x`` with their bounds."""
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    x = np.asarray(x, dtype=float)
    H = _History(h, t)
    _check_probe(x, H)
    T = H.t
    d_snap, _, theta_x = _membership(x, H)
    d_t, eps = float(d_snap[-1]), float(np.min(d_snap))
    U = float(H.snaps[-1].u_sup_running)
    delta = _running_delta(H, gamma)
    case = 2 if (U > 0 and d_t >= 2 * eps and np.isfinite(eps)) else 1
    t_star = (d_t - eps) / (2 * U) if case == 2 else float("nan")
    bounds = (case2_bounds if case == 2 else case1_bounds)(U, T, delta, gamma)
    J = np.zeros(4)
    if np.isfinite(eps) and np.isfinite(delta):
        # distance between snapshots: linear interpolation in time
        def d_at(tau):
            return np.minimum(np.interp(tau, H.times, d_snap), delta)

        floor = max(min(eps, delta), H.grid.h * 1e-3)
        s_nodes, s_w = _log_time_nodes(floor * floor / 400, T)
        de = d_at(T - s_nodes)
        J[0] = abs(np.dot(s_w, _ball_profile(de, s_nodes)))
        J[1] = abs(0.5 * np.dot(s_w, _ball_profile(delta, s_nodes) - _ball_profile(de, s_nodes)))
        for s, ws, d in zip(s_nodes, s_w, de):
            if d >= delta:
                continue
            polys = H.polys_at(T - s)
            dist, near_pt, inside = H.distance(x, polys)
            normal = (x - near_pt) if inside else (near_pt - x)
            lo = math.atan2(normal[1], normal[0]) - np.pi / 2
            scale = min(np.sqrt(s), 2 * s / max(d, 1e-300))
            r, wr = _radial_nodes(d, delta, scale)
            full = np.zeros((len(r), M_MAX + 1), dtype=complex)
            half = np.zeros_like(full)
            for poly, orient in polys:
                ev = circle_events(x, r, poly, orient)
                start = geo._winding_numbers(x + np.outer(r, [1.0, 0.0]), poly) != 0
                full += arc_moments(len(r), *ev, start)
                half += arc_moments(len(r), *ev, start, lo=lo, span=np.pi)
            rr = full + half_circle_moments(lo)[None, :] - 2 * half
            q = r * r / (4 * s)
            j3 = r / (8 * np.pi * s * s) * np.exp(-q) * ((q - 1) * rr[:, 0].real + q * rr[:, 2].real)
            j4 = kn.g_function(r, s) / np.pi * (-3.0) * rr[:, 4].real
            J[2] += ws * np.dot(wr, j3)
            J[3] += ws * np.dot(wr, j4)
        J[2:] = np.abs(J[2:])
    if np.isfinite(delta) and (np.isfinite(eps) or theta_x):
        chi = default_partition(H.grid)
        with warnings.catch_warnings():
            # probes near the boundary are the point of the ledger
            warnings.simplefilter("ignore", NearBoundaryWarning)
            total = (near_zone(x, T, h, ["d1"], chi, method="raster", _H=H)[0]
                     + far_zone(x, T, h, ["d1"], chi, _H=H)[0])
            i2 = near_zone(x, T, h, ["d1"], Partition(delta, delta), _H=H)[0]
        I1 = abs(total - i2)
    else:
        I1 = 0.0
    return BoundLedger(x=(float(x[0]), float(x[1])), t=T, d_t=d_t, eps=eps, U=U, delta=delta,
                       t_star=float(t_star), case=case, J1=float(J[0]), J2=float(J[1]),
                       J3=float(J[2]), J4=float(J[3]), J1_bound=bounds[0], J2_bound=bounds[1],
                       J3_bound=bounds[2], J4_bound=bounds[3], I1=float(I1),
                       I1_bound=i1_bound(T, delta))
