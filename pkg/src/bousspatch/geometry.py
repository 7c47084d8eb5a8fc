"""Closed patch boundaries, regularity statistics and distance queries.

A :class:`Contour` stores ``N`` nodes ``z(alpha_m)``, ``alpha_m = m/N``, of a
closed curve and interpolates them with the trigonometric polynomial of
degree ``N/2`` (the Nyquist mode is split symmetrically).  Derivatives,
arclength, area and off-node positions all come from that interpolant, so
smooth curves are resolved with spectral accuracy.

Orientation is recorded rather than imposed; normals are returned pointing
into the patch for either orientation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

DEGENERATE_TANGENT = 1e-12
BOUNDARY_TOLERANCE = 1e-12
REFINE = 8
RR_ANGLES = 4096


class DegenerateContourError(ValueError):
    """Raised when the contour parametrization has vanishing speed."""


class Contour:
    """Closed curve through ``N`` nodes at uniform parameter values.

    Parameters
    ----------
    nodes : array_like, shape (N, 2)
        ``N`` must be a power of two, at least 16.
    """

    __slots__ = ("nodes", "_coeffs", "_cache")

    def __init__(self, nodes):
        nodes = np.array(nodes, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError(f"nodes must have shape (N, 2), got {nodes.shape}")
        n = len(nodes)
        if n < 16 or n & (n - 1):
            raise ValueError(f"node count must be a power of two >= 16, got {n}")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("contour nodes must be finite")
        nodes.flags.writeable = False
        self.nodes = nodes
        z = nodes[:, 0] + 1j * nodes[:, 1]
        self._coeffs = np.fft.fft(z) / n
        self._cache = {}

    @property
    def N(self):
        return len(self.nodes)

    @property
    def alpha(self):
        return np.arange(self.N) / self.N

    # interpolant -----------------------------------------------------------

    def _modes(self):
        """Wavenumbers and coefficients with the Nyquist mode split in two."""
        n = self.N
        m = np.fft.fftfreq(n, 1.0 / n)
        c = self._coeffs.copy()
        half = n // 2
        c[half] *= 0.5
        return np.append(m, half), np.append(c, c[half])

    def sample(self, M=None, order=0):
        """Values of ``d^order z / d alpha^order`` at ``alpha = j/M``, shape (M, 2).

        ``M`` defaults to ``N`` and must be a multiple of ``N``.
        """
        n = self.N
        M = n if M is None else int(M)
        if M % n:
            raise ValueError(f"sample count {M} is not a multiple of N={n}")
        key = ("sample", M, order)
        if key not in self._cache:
            m, c = self._modes()
            spec = np.zeros(M, complex)
            np.add.at(spec, m.astype(int) % M, c * (2j * np.pi * m) ** order)
            w = np.fft.ifft(spec) * M
            out = np.column_stack([w.real, w.imag])
            out.flags.writeable = False
            self._cache[key] = out
        return self._cache[key]

    def evaluate(self, alpha, order=0):
        """Interpolant (or its derivative) at arbitrary parameter values."""
        alpha = np.asarray(alpha, dtype=float)
        m, c = self._modes()
        w = np.exp(2j * np.pi * np.multiply.outer(alpha, m)) @ (c * (2j * np.pi * m) ** order)
        return np.stack([w.real, w.imag], axis=-1)

    # global quantities -----------------------------------------------------

    @property
    def signed_area(self):
        """Enclosed area, positive for counterclockwise orientation."""
        n = self.N
        m = np.fft.fftfreq(n, 1.0 / n)
        m[n // 2] = 0  # the symmetric Nyquist term carries no area
        return float(np.pi * np.sum(m * np.abs(self._coeffs) ** 2))

    @property
    def area(self):
        return abs(self.signed_area)

    @property
    def orientation(self):
        """+1 for counterclockwise, -1 for clockwise."""
        return 1 if self.signed_area > 0 else -1

    def length(self):
        speed = np.hypot(*self.sample(REFINE * self.N, 1).T)
        return float(np.mean(speed))

    def spacing_ratio(self):
        """Largest over smallest node-to-node chord."""
        d = np.hypot(*(np.roll(self.nodes, -1, axis=0) - self.nodes).T)
        return float(d.max() / d.min())

    # transformations -------------------------------------------------------

    def reversed(self):
        """Same curve traversed backwards, keeping node 0 in place."""
        idx = (-np.arange(self.N)) % self.N
        return Contour(self.nodes[idx])

    def counterclockwise(self):
        return self if self.orientation > 0 else self.reversed()

    def translated(self, shift):
        return Contour(self.nodes + np.asarray(shift, dtype=float))

    def __repr__(self):
        return f"Contour(N={self.N}, area={self.area:.6g})"

    # factories ---------------------------------------------------------------

    @classmethod
    def circle(cls, radius=1.0, N=256, center=(0.0, 0.0)):
        a = 2 * np.pi * np.arange(N) / N
        return cls(np.column_stack([radius * np.cos(a), radius * np.sin(a)]) + center)

    @classmethod
    def ellipse(cls, a=1.0, b=0.5, N=256, center=(0.0, 0.0), angle=0.0):
        s = 2 * np.pi * np.arange(N) / N
        p = np.column_stack([a * np.cos(s), b * np.sin(s)])
        r = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        return cls(p @ r.T + center)

    @classmethod
    def star(cls, radius=1.0, amplitude=0.2, lobes=5, N=256, center=(0.0, 0.0)):
        s = 2 * np.pi * np.arange(N) / N
        rho = radius * (1 + amplitude * np.cos(lobes * s))
        return cls(np.column_stack([rho * np.cos(s), rho * np.sin(s)]) + center)

    # serialization -------------------------------------------------------------

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "x", "y"])
            for a, (x, y) in zip(self.alpha, self.nodes):
                w.writerow([repr(float(a)), repr(float(x)), repr(float(y))])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 1:3])


def tangents_and_curvature(c):
    """Per-node tangent ``dz/dalpha`` and signed curvature.

    Curvature is ``(x' y'' - y' x'') / |z'|^3``, positive on convex arcs of a
    counterclockwise curve.
    """
    d1 = c.sample(order=1)
    d2 = c.sample(order=2)
    speed = np.hypot(d1[:, 0], d1[:, 1])
    if speed.min() < DEGENERATE_TANGENT:
        raise DegenerateContourError(f"tangent speed {speed.min():.3e} below {DEGENERATE_TANGENT}")
    kappa = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed**3
    return d1, kappa


@dataclass(frozen=True)
class RegularityStats:
    inf_tangent: float
    holder_seminorm: float
    gamma: float
    max_curvature: float
    area: float
    delta: float


def holder_seminorm(values, gamma):
    """Discrete Hölder seminorm of periodic samples at ``alpha_m = m/N``.

    Uses all node pairs with the periodic parameter distance.
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    best = 0.0
    lag = np.arange(1, n // 2 + 1)
    dist = (lag / n) ** gamma
    # pairs at a fixed periodic lag share a denominator
    for k, dk in zip(lag, dist):
        diff = values - np.roll(values, -k, axis=0)
        best = max(best, float(np.max(np.hypot(diff[:, 0], diff[:, 1]))) / dk)
    return best


def regularity_stats(c, gamma):
    """Regularity statistics of a single snapshot.

    ``delta = (inf_tangent / holder_seminorm)^(1/gamma)``.
    """
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    d1, kappa = tangents_and_curvature(c)
    inf_t = float(np.min(np.hypot(d1[:, 0], d1[:, 1])))
    semi = holder_seminorm(d1, gamma)
    delta = (inf_t / semi) ** (1 / gamma) if semi > 0 else np.inf
    return RegularityStats(
        inf_tangent=inf_t,
        holder_seminorm=semi,
        gamma=float(gamma),
        max_curvature=float(np.max(np.abs(kappa))),
        area=c.area,
        delta=float(delta),
    )


@dataclass(frozen=True)
class DistanceProbe:
    x: np.ndarray
    d: float
    nearest: np.ndarray
    inward_normal: np.ndarray
    alpha: float


def _newton_nearest(c, x, alpha, steps=30, max_step=None):
    """Refine local minima of ``|z(alpha) - x|^2`` from starting guesses.

    A step is taken only where it strictly decreases the distance, so points
    on a circle of stationary values stay where they start.
    """
    z = c.evaluate(alpha)
    dist2 = np.sum((z - x) ** 2, axis=-1)
    for _ in range(steps):
        d1, d2 = c.evaluate(alpha, 1), c.evaluate(alpha, 2)
        r = z - x
        g = np.sum(r * d1, axis=-1)
        gp = np.sum(d1 * d1, axis=-1) + np.sum(r * d2, axis=-1)
        ok = gp > 1e-12 * np.sum(d1 * d1, axis=-1)
        step = np.where(ok, -g / np.where(ok, gp, 1.0), 0.0)
        if max_step is not None:
            step = np.clip(step, -max_step, max_step)
        z_new = c.evaluate(alpha + step)
        dist2_new = np.sum((z_new - x) ** 2, axis=-1)
        take = dist2_new < dist2
        alpha = np.where(take, alpha + step, alpha)
        z = np.where(take[..., None], z_new, z)
        dist2 = np.where(take, dist2_new, dist2)
        if not np.any(take & (np.abs(step) > 1e-15)):
            break
    return np.mod(alpha, 1.0)


def distance_probe(x, c):
    """Nearest boundary point, distance and inward normal.

    Equidistant nearest points are resolved in favour of the smallest
    parameter value.
    """
    x = np.asarray(x, dtype=float)
    M = REFINE * c.N
    pts = c.sample(M)
    dd = np.hypot(*(pts - x).T)
    chord = np.max(np.hypot(*(np.roll(pts, -1, axis=0) - pts).T))
    cand = np.flatnonzero(dd <= dd.min() + chord)
    alpha = _newton_nearest(c, x, cand / M, max_step=1.0 / M)
    z = c.evaluate(alpha)
    d = np.hypot(*(z - x).T)
    tie = d <= d.min() * (1 + 1e-12) + BOUNDARY_TOLERANCE
    a = float(np.min(alpha[tie]))
    nearest = c.evaluate(a)
    t = c.evaluate(a, 1)
    t = t / np.hypot(*t)
    normal = c.orientation * np.array([-t[1], t[0]])
    return DistanceProbe(x=x, d=float(np.hypot(*(nearest - x))), nearest=nearest,
                         inward_normal=normal, alpha=a)


def _winding_numbers(points, poly, chunk=256):
    """Winding number of a closed polyline around each point.

    Points are processed in order of height so that each chunk only meets
    the edges whose vertical span overlaps it.
    """
    a = poly
    b = np.roll(poly, -1, axis=0)
    lo = np.minimum(a[:, 1], b[:, 1])
    hi = np.maximum(a[:, 1], b[:, 1])
    order = np.argsort(points[:, 1], kind="stable")
    out = np.empty(len(points), dtype=int)
    for s in range(0, len(points), chunk):
        sel = order[s:s + chunk]
        p = points[sel]
        keep = (hi >= p[:, 1].min()) & (lo <= p[:, 1].max())
        ea, eb = a[keep], b[keep]
        p = p[:, None, :]
        ay = ea[None, :, 1] - p[..., 1]
        by = eb[None, :, 1] - p[..., 1]
        cross = (ea[None, :, 0] - p[..., 0]) * by - (eb[None, :, 0] - p[..., 0]) * ay
        up = (ay <= 0) & (by > 0) & (cross > 0)
        down = (ay > 0) & (by <= 0) & (cross < 0)
        out[sel] = up.sum(axis=1) - down.sum(axis=1)
    return out


def _polyline(c):
    key = ("polyline",)
    if key not in c._cache:
        M = REFINE * c.N
        poly = c.sample(M)
        # distance between the chords and the curve is at most |z''| h^2 / 8
        sag = np.max(np.hypot(*c.sample(M, 2).T)) / (8 * M * M)
        c._cache[key] = (poly, cKDTree(poly, compact_nodes=False), 4 * sag + BOUNDARY_TOLERANCE)
    return c._cache[key]


def _segment_distance(pts, poly, tree, k=4):
    """Distance from each point to the polyline edges next to its nearest vertices."""
    M = len(poly)
    _, idx = tree.query(pts, k=k)
    best = np.full(len(pts), np.inf)
    for shift in (0, -1):
        i0 = (idx + shift) % M
        a = poly[i0]
        e = poly[(i0 + 1) % M] - a
        w = pts[:, None, :] - a
        s = np.clip(np.sum(w * e, axis=-1) / np.sum(e * e, axis=-1), 0, 1)
        dist = np.hypot(*np.moveaxis(w - s[..., None] * e, -1, 0))
        best = np.minimum(best, dist.min(axis=1))
    return best


def point_in_patch(x, c):
    """Whether points lie in the closed patch bounded by ``c``.

    Winding number on the refined polyline; points within the chord sag of
    the polyline are decided by their signed distance to the curve itself,
    and points within ``BOUNDARY_TOLERANCE`` of the curve count as inside.
    Accepts a single point or an array of shape (m, 2).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    poly, tree, band = _polyline(c)
    inside = _winding_numbers(pts, poly) != 0
    for i in np.flatnonzero(_segment_distance(pts, poly, tree) <= band):
        p = distance_probe(pts[i], c)
        s = np.dot(pts[i] - p.nearest, p.inward_normal)
        inside[i] = s >= -BOUNDARY_TOLERANCE
    return bool(inside[0]) if single else inside


class RrMeasure(NamedTuple):
    measure: float
    bound: float
    gamma: float


def geometric_lemma_bound(d, r, delta, gamma):
    """``2 pi ((1 + 2^g) d/r + 2^g (r/delta)^g)``."""
    g2 = 2.0**gamma
    return 2 * np.pi * ((1 + g2) * d / r + g2 * (r / delta) ** gamma)


def _circle_membership(x, r, c, angles):
    e = np.column_stack([np.cos(angles), np.sin(angles)])
    return point_in_patch(x + r * e, c)


def _locate_transitions(x, r, c, start, width, start_in, bisections):
    """Angles where membership changes inside each bracket ``[start, start + width]``.

    Uses the exact circle-contour crossings when one falls in the bracket and
    bisection on :func:`point_in_patch` otherwise.
    """
    out = start + 0.5 * width
    if len(start) == 0:
        return out
    arcs = circle_arcs(x, r, c)
    cross = np.mod(arcs.ravel(), 2 * np.pi) if len(arcs) else np.zeros(0)
    missing = []
    for i, a in enumerate(start):
        off = np.mod(cross - a, 2 * np.pi)
        hit = off[off <= width]
        if len(hit) == 1:
            out[i] = a + hit[0]
        else:
            missing.append(i)
    if missing:
        idx = np.array(missing)
        lo, hi = start[idx], start[idx] + width
        lo_in = start_in[idx]
        for _ in range(bisections):
            mid = 0.5 * (lo + hi)
            same = _circle_membership(x, r, c, mid) == lo_in
            lo = np.where(same, mid, lo)
            hi = np.where(same, hi, mid)
        out[idx] = 0.5 * (lo + hi)
    return out


def rr_measure(x, r, c, gamma=0.5, delta=None, n_angles=RR_ANGLES, bisections=40):
    """Angular measure of ``R_r`` = symmetric difference of ``S_r`` and the half circle.

    ``S_r`` is the set of unit directions ``z`` with ``x + r z`` in the patch,
    located by sampling ``n_angles`` directions; each change of membership
    is then placed at the exact circle-contour crossing in its bracket.  The half circle collects the directions with nonnegative
    component along the inward normal at the nearest boundary point.

    Returns the measure together with the Geometric Lemma right-hand side
    evaluated with ``delta`` (the contour's own cutoff when omitted).
    """
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    x = np.asarray(x, dtype=float)
    probe = distance_probe(x, c)
    if delta is None:
        delta = regularity_stats(c, gamma).delta
    th = 2 * np.pi * np.arange(n_angles) / n_angles
    inside = _circle_membership(x, r, c, th)
    j = np.flatnonzero(inside != np.roll(inside, -1))
    s_breaks = _locate_transitions(x, r, c, th[j], 2 * np.pi / n_angles, inside[j], bisections)
    phi = np.arctan2(probe.inward_normal[1], probe.inward_normal[0])
    breaks = np.sort(np.mod(np.concatenate([s_breaks, [phi - np.pi / 2, phi + np.pi / 2]]), 2 * np.pi))
    edges = np.append(breaks, breaks[0] + 2 * np.pi)
    width = np.diff(edges)
    mid = edges[:-1] + 0.5 * width
    in_s = _circle_membership(x, r, c, mid)
    in_sigma = np.cos(mid - phi) >= 0
    measure = float(np.sum(width[in_s != in_sigma]))
    return RrMeasure(measure, float(geometric_lemma_bound(probe.d, r, delta, gamma)), float(gamma))


def circle_arcs(x, r, c, refine=16):
    """Arcs of the circle ``|y - x| = r`` that lie inside the patch.

    Intersections with the contour are located on a refined polyline and
    polished by Newton iteration on the interpolant.  Returns an array of
    shape (k, 2) of ``[start, end]`` angles with ``end > start`` (ends may
    exceed 2 pi); the arcs are traversed counterclockwise.
    """
    x = np.asarray(x, dtype=float)
    M = refine * c.N
    pts = c.sample(M)
    f = np.hypot(*(pts - x).T) - r
    j = np.flatnonzero(np.sign(f) != np.sign(np.roll(f, -1)))
    if len(j) == 0:
        if point_in_patch(x + np.array([r, 0.0]), c):
            return np.array([[0.0, 2 * np.pi]])
        return np.zeros((0, 2))
    f0, f1 = f[j], np.roll(f, -1)[j]
    alpha = (j + f0 / (f0 - f1)) / M
    for _ in range(6):
        z = c.evaluate(alpha)
        t = c.evaluate(alpha, 1)
        rvec = z - x
        g = 0.5 * (np.sum(rvec * rvec, axis=1) - r * r)
        gp = np.sum(rvec * t, axis=1)
        alpha = alpha - np.clip(g / np.where(gp == 0, 1.0, gp), -1.0 / M, 1.0 / M)
    z = c.evaluate(alpha)
    t = c.evaluate(alpha, 1)
    ang = np.mod(np.arctan2(z[:, 1] - x[1], z[:, 0] - x[0]), 2 * np.pi)
    inward = c.orientation * np.column_stack([-t[:, 1], t[:, 0]])
    circ_tangent = np.column_stack([-np.sin(ang), np.cos(ang)])
    enters = np.sum(inward * circ_tangent, axis=1) > 0
    order = np.argsort(ang)
    ang, enters = ang[order], enters[order]
    # rotate so that the list starts with an entry
    k = int(np.argmax(enters))
    ang = np.roll(ang, -k)
    enters = np.roll(enters, -k)
    ang = np.where(np.arange(len(ang)) > 0, np.where(ang < ang[0], ang + 2 * np.pi, ang), ang)
    starts = ang[enters]
    ends = ang[~enters]
    if len(starts) != len(ends):
        raise DegenerateContourError("unbalanced circle crossings; contour touches the circle tangentially")
    return np.column_stack([starts, ends])


def resample_arclength(c, N_new=None):
    """New contour with nodes equally spaced in arclength, starting at node 0."""
    tangents_and_curvature(c)
    N_new = c.N if N_new is None else int(N_new)
    M = max(REFINE * c.N, 4 * N_new)
    speed = np.hypot(*c.sample(M, 1).T)
    sh = np.fft.rfft(speed) / M
    total = sh[0].real
    m = np.arange(len(sh))
    m[0] = 1
    # s(alpha) = total alpha + periodic part, integrated spectrally
    ish = sh / (2j * np.pi * m)
    ish[0] = 0
    if M % 2 == 0:
        ish[-1] = 0

    def arclength(a):
        a = np.asarray(a)
        k = np.arange(len(ish))
        w = 2 * np.real(np.exp(2j * np.pi * np.multiply.outer(a, k)) @ ish)
        w0 = 2 * np.real(np.sum(ish))
        return total * a + (w - w0)

    target = total * np.arange(N_new) / N_new
    a = target / total
    for _ in range(50):
        err = arclength(a) - target
        a = a - err / np.hypot(*c.evaluate(a, 1).T)
        if np.max(np.abs(err)) < 1e-15 * total:
            break
    return Contour(c.evaluate(a))
