"""Boussinesq temperature patch in vorticity form.

The vorticity obeys ``omega_t + u . grad omega - Delta omega = g d_1 theta``
with unit viscosity, and ``theta`` is the indicator of a patch whose boundary
is carried by Lagrangian markers.  For the spectral solve the indicator is
replaced by a smooth raster of the contour.

Time stepping is classical RK4 in integrating-factor (Lawson) form for the
vorticity; markers move with the same RK4 stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geo
from . import spectral as sp

# tanh(y) rounds to 1 in double precision for y > 18.7
RASTER_CUTOFF = 10.0
RESAMPLE_SPACING_RATIO = 3.0
HESSIAN_INDICES = ("111", "112", "122", "211", "212", "222")


class ConfigurationError(ValueError):
    """Raised for configurations the solver cannot run."""


class CflError(ValueError):
    """Raised when the time step violates the CFL restriction."""


class HistoryError(KeyError):
    """Raised when a requested time is not a stored snapshot."""


# configuration -------------------------------------------------------------

VELOCITY_PROFILES = ("zero", "taylor_green", "gaussian_vortex")
CONTOUR_SHAPES = ("circle", "ellipse", "star", "none")


@dataclass(frozen=True)
class SimConfig:
    """Run parameters.

    ``initial_velocity`` and ``initial_contour`` are ``(name, params)`` pairs;
    contour centres default to the middle of the box.
    """

    grid: sp.Grid = field(default_factory=lambda: sp.Grid(256, 8.0))
    dt: float = 0.005
    T: float = 1.0
    cfl_safety: float = 0.5
    initial_velocity: tuple = ("zero", {})
    initial_contour: tuple = ("ellipse", {"a": 1.0, "b": 0.5})
    contour_nodes: int = 512
    raster_width: float = 2.0
    snapshot_stride: int = 1
    gamma: float = 0.5
    gravity: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not self.T >= 0:
            raise ConfigurationError(f"T must be nonnegative, got {self.T}")
        if not 0 < self.cfl_safety <= 1:
            raise ConfigurationError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if not self.raster_width >= 1:
            raise ConfigurationError(f"raster_width must be >= 1, got {self.raster_width}")
        if not 0 < self.gamma < 1:
            raise ConfigurationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if int(self.snapshot_stride) < 1:
            raise ConfigurationError(f"snapshot_stride must be >= 1, got {self.snapshot_stride}")
        if self.initial_velocity[0] not in VELOCITY_PROFILES:
            raise ConfigurationError(f"unknown velocity profile {self.initial_velocity[0]!r}")
        if self.initial_contour[0] not in CONTOUR_SHAPES:
            raise ConfigurationError(f"unknown contour shape {self.initial_contour[0]!r}")


def initial_vorticity(config):
    g = config.grid
    name, params = config.initial_velocity
    if name == "zero":
        return sp.SpectralField.zeros(g)
    if name == "taylor_green":
        amp = params.get("amplitude", 1.0)
        m = params.get("mode", 1)
        k = 2 * np.pi * m / g.L
        # u = amp (sin kx cos ky, -cos kx sin ky)
        return sp.SpectralField.from_function(g, lambda x, y: 2 * amp * k * np.sin(k * x) * np.sin(k * y))
    circ = params.get("circulation", 1.0)
    s = params.get("sigma", 0.5)
    cx, cy = params.get("center", (g.L / 2, g.L / 2))
    w = sp.SpectralField.from_function(
        g, lambda x, y: circ / (np.pi * s * s) * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (s * s))
    )
    c = w.coeffs.copy()
    c[0, 0] = 0
    return sp.SpectralField.from_coeffs(g, c)


def initial_contour(config):
    name, params = config.initial_contour
    if name == "none":
        return None
    L = config.grid.L
    params = dict(params)
    center = params.pop("center", (L / 2, L / 2))
    N = config.contour_nodes
    if name == "circle":
        c = geo.Contour.circle(params.get("radius", 1.0), N, center)
    elif name == "ellipse":
        c = geo.Contour.ellipse(params.get("a", 1.0), params.get("b", 0.5), N, center, params.get("angle", 0.0))
    else:
        c = geo.Contour.star(params.get("radius", 1.0), params.get("amplitude", 0.2),
                             int(params.get("lobes", 5)), N, center)
    return geo.resample_arclength(c)


# rasterization -------------------------------------------------------------


def _check_inside_box(c, grid, margin):
    lo, hi = c.nodes.min(axis=0), c.nodes.max(axis=0)
    if np.any(lo < margin) or np.any(hi > grid.L - margin):
        raise ConfigurationError(
            f"contour spans [{lo.min():.4g}, {hi.max():.4g}] but must stay {margin:.4g} away "
            f"from the box edges [0, {grid.L:.4g}]"
        )


def signed_distance(points, c):
    """Distance to the refined contour polyline, positive inside the patch."""
    poly, tree, _ = geo._polyline(c)
    d = geo._segment_distance(points, poly, tree)
    inside = geo._winding_numbers(points, poly) != 0
    return np.where(inside, d, -d)


def _scanline_inside(poly, x1, x2):
    """Even-odd fill of a closed polyline on the tensor grid ``x1 x x2``.

    Crossings of every edge with the lines ``x2 = const`` are collected once;
    each node is inside when an odd number of crossings lies below it in
    ``x1``.  ``x2`` must be uniformly spaced.
    """
    a = poly
    b = np.roll(poly, -1, axis=0)
    h2 = x2[1] - x2[0]
    lo = np.minimum(a[:, 1], b[:, 1])
    hi = np.maximum(a[:, 1], b[:, 1])
    j0 = np.ceil((lo - x2[0]) / h2).astype(int)
    j1 = np.ceil((hi - x2[0]) / h2).astype(int)  # exclusive; half-open rule at vertices
    count = np.clip(j1 - j0, 0, None)
    edge = np.repeat(np.arange(len(a)), count)
    row = np.repeat(j0, count) + (np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count))
    keep = (row >= 0) & (row < len(x2))
    edge, row = edge[keep], row[keep]
    y = x2[row]
    ea, eb = a[edge], b[edge]
    xc = ea[:, 0] + (y - ea[:, 1]) * (eb[:, 0] - ea[:, 0]) / (eb[:, 1] - ea[:, 1])
    inside = np.zeros((len(x1), len(x2)), dtype=bool)
    order = np.lexsort((xc, row))
    row, xc = row[order], xc[order]
    starts = np.searchsorted(row, np.arange(len(x2) + 1))
    for j in np.flatnonzero(np.diff(starts)):
        cross = xc[starts[j]:starts[j + 1]]
        inside[:, j] = np.searchsorted(cross, x1) % 2 == 1
    return inside


def rasterize_patch(c, grid, width=2.0):
    """Smoothed indicator ``(1 + tanh(2 s / (width h))) / 2`` of the patch.

    ``s`` is the signed distance to the contour (positive inside), taken
    from the refined contour polyline.  Nodes more than
    ``RASTER_CUTOFF * width * h`` from the contour are set to exactly 0 or
    1.  Beyond ``3 width h``, where the profile is saturated to 1e-5, the
    distance to the nearest polyline vertex stands in for the distance to the
    polyline.
    """
    h = grid.h
    band = RASTER_CUTOFF * width * h
    _check_inside_box(c, grid, band)
    poly, tree, _ = geo._polyline(c)
    lo = np.floor((c.nodes.min(axis=0) - band) / h).astype(int)
    hi = np.ceil((c.nodes.max(axis=0) + band) / h).astype(int)
    i1 = np.arange(lo[0], hi[0] + 1)
    i2 = np.arange(lo[1], hi[1] + 1)
    inside = _scanline_inside(poly, i1 * h, i2 * h)
    X1, X2 = np.meshgrid(i1 * h, i2 * h, indexing="ij")
    pts = np.column_stack([X1.ravel(), X2.ravel()])
    d, _ = tree.query(pts, distance_upper_bound=band)
    chord = np.max(np.hypot(*(np.roll(poly, -1, axis=0) - poly).T))
    near = np.flatnonzero(d < 3 * width * h + chord)
    d[near] = geo._segment_distance(pts[near], poly, tree, k=2)
    s = np.where(inside.ravel(), d, -d)
    theta = np.where(np.abs(s) > band, (s > 0).astype(float), 0.5 * (1 + np.tanh(2 * s / (width * h))))
    out = np.zeros(grid.shape)
    # the band may touch the last node; the box is periodic
    out[np.ix_(i1 % grid.n, i2 % grid.n)] = theta.reshape(X1.shape)
    return sp.SpectralField.from_values(grid, out)


# dynamics ------------------------------------------------------------------


@dataclass(frozen=True)
class SimState:
    time: float
    omega: sp.SpectralField
    contour: geo.Contour | None
    theta: sp.SpectralField
    u_sup_running: float
    epoch: int = 0


def velocity_sup(omega):
    u1, u2 = sp.biot_savart(omega)
    return float(np.max(np.hypot(u1.values, u2.values)))


def advection_term(omega):
    """Dealiased ``u . grad omega`` in coefficient space."""
    w = sp.dealias(omega)
    u1, u2 = sp.biot_savart(w)
    prod = u1.values * sp.derivative(w, 1).values + u2.values * sp.derivative(w, 2).values
    return sp.dealias(sp.SpectralField.from_values(omega.grid, prod)).coeffs


def tendency(omega, theta, gravity=1.0):
    """Explicit part of the vorticity equation, ``-u . grad omega + g d_1 theta``."""
    return -advection_term(omega) + gravity * sp.derivative(theta, 1).coeffs


def rhs(state, gravity=1.0):
    """Coefficient-space tendency of a state; viscosity is left to the integrating factor."""
    return tendency(state.omega, state.theta, gravity)


def marker_velocity(omega, points):
    """Velocity of ``omega`` at marker positions, shape (m, 2)."""
    vals, _ = sp.evaluate_many(sp.biot_savart(omega), points)
    return vals.T


def _theta_of(contour, grid, width):
    if contour is None:
        return sp.SpectralField.zeros(grid)
    return rasterize_patch(contour, grid, width)


def max_stable_dt(omega, cfl_safety):
    return cfl_safety * omega.grid.h / max(velocity_sup(omega), 1e-12)


_ETD_CACHE = {}
_ETD_POINTS = 32


def etd_coefficients(grid, dt):
    """ETDRK4 weights for ``w' = -|k|^2 w + N`` on ``grid`` with step ``dt``.

    Returns ``(E, E2, Q, f1, f2, f3)``; the phi-type functions are averaged
    over a circle of radius 1 around ``-|k|^2 dt`` in the complex plane so
    that they stay accurate as ``|k|^2 dt -> 0``.
    """
    key = (grid, float(dt))
    if key not in _ETD_CACHE:
        # |k|^2 takes far fewer distinct values than there are modes
        m1, m2 = grid.index
        msq, inv = np.unique(np.broadcast_to(m1 * m1 + m2 * m2, grid.coeff_shape), return_inverse=True)
        L = -msq * (2 * np.pi / grid.L) ** 2 * dt
        r = np.exp(1j * np.pi * (np.arange(1, _ETD_POINTS + 1) - 0.5) / _ETD_POINTS)
        LR = L[:, None] + r
        eLR = np.exp(LR)
        Q = dt * np.mean((np.exp(LR / 2) - 1) / LR, axis=-1).real
        f1 = dt * np.mean((-4 - LR + eLR * (4 - 3 * LR + LR**2)) / LR**3, axis=-1).real
        f2 = dt * np.mean((2 + LR + eLR * (LR - 2)) / LR**3, axis=-1).real
        f3 = dt * np.mean((-4 - 3 * LR - LR**2 + eLR * (4 - LR)) / LR**3, axis=-1).real
        inv = inv.reshape(grid.coeff_shape)
        coeffs = tuple(a[inv] for a in (np.exp(L), np.exp(L / 2), Q, f1, f2, f3))
        if len(_ETD_CACHE) > 8:
            _ETD_CACHE.clear()
        _ETD_CACHE[key] = coeffs
    return _ETD_CACHE[key]


def step(state, dt, cfl_safety=0.5, raster_width=2.0, gravity=1.0):
    """Advance one fourth-order exponential Runge-Kutta step (ETDRK4).

    Viscosity enters only through exact exponentials of ``-|k|^2 dt``;
    markers follow classical RK4 with the stage velocities of the same
    intermediate vorticities.
    """
    g = state.omega.grid
    dt_max = max_stable_dt(state.omega, cfl_safety)
    if dt > dt_max:
        raise CflError(f"dt = {dt:.6g} violates the CFL restriction; admissible dt <= {dt_max:.6g}")
    E, E2, Q, f1, f2, f3 = etd_coefficients(g, dt)
    w0 = state.omega.coeffs
    z0 = None if state.contour is None else state.contour.nodes

    def field(c):
        return sp.SpectralField.from_coeffs(g, c)

    def stage(wc, z):
        om = field(wc)
        cont = None if z is None else geo.Contour(z)
        th = _theta_of(cont, g, raster_width)
        k = tendency(om, th, gravity)
        v = None if z is None else marker_velocity(om, z)
        return k, v

    n1, v1 = stage(w0, z0)
    a = E2 * w0 + Q * n1
    n2, v2 = stage(a, None if z0 is None else z0 + 0.5 * dt * v1)
    b = E2 * w0 + Q * n2
    n3, v3 = stage(b, None if z0 is None else z0 + 0.5 * dt * v2)
    c = E2 * a + Q * (2 * n3 - n1)
    n4, v4 = stage(c, None if z0 is None else z0 + dt * v3)
    w_new = E * w0 + f1 * n1 + 2 * f2 * (n2 + n3) + f3 * n4
    omega = field(w_new)
    epoch = state.epoch
    contour = None
    if z0 is not None:
        contour = geo.Contour(z0 + dt / 6 * (v1 + 2 * v2 + 2 * v3 + v4))
        if contour.spacing_ratio() > RESAMPLE_SPACING_RATIO:
            contour = geo.resample_arclength(contour)
            epoch += 1
    theta = _theta_of(contour, g, raster_width)
    u_sup = max(state.u_sup_running, velocity_sup(omega))
    return SimState(state.time + dt, omega, contour, theta, u_sup, epoch)


def advect_contour(contour, velocity, dt, t=0.0):
    """One RK4 step of markers in a prescribed velocity ``velocity(points, t)``."""
    z = contour.nodes
    v1 = velocity(z, t)
    v2 = velocity(z + 0.5 * dt * v1, t + 0.5 * dt)
    v3 = velocity(z + 0.5 * dt * v2, t + 0.5 * dt)
    v4 = velocity(z + dt * v3, t + dt)
    return geo.Contour(z + dt / 6 * (v1 + 2 * v2 + 2 * v3 + v4))


# history ---------------------------------------------------------------------


@dataclass(frozen=True)
class Snapshot:
    time: float
    omega: sp.SpectralField | None
    theta: sp.SpectralField | None
    advection: np.ndarray | None
    contour: geo.Contour | None
    epoch: int
    u_sup: float
    u_sup_running: float


@dataclass
class RunHistory:
    """Time-ordered snapshots plus a per-step trace of cheap quantities.

    ``trace`` rows are ``(time, max_curvature, area, u_sup)``.
    """

    config: SimConfig | None
    snapshots: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def times(self):
        return np.array([s.time for s in self.snapshots])

    def append(self, snap):
        if self.snapshots and not snap.time > self.snapshots[-1].time:
            raise ValueError("snapshot times must increase strictly")
        self.snapshots.append(snap)

    def index(self, t):
        times = self.times
        hit = np.flatnonzero(np.abs(times - t) <= 1e-9 * max(1.0, abs(t)))
        if len(hit) == 0:
            raise HistoryError(f"t = {t} is not a snapshot time")
        return int(hit[0])

    def at(self, t):
        return self.snapshots[self.index(t)]

    def running_delta(self, gamma):
        """Running minimum over snapshots of the contour cutoff."""
        vals = [geo.regularity_stats(s.contour, gamma).delta if s.contour is not None else np.inf
                for s in self.snapshots]
        return np.minimum.accumulate(vals)


def _compact(f):
    return sp.SpectralField.from_coeffs(f.grid, f.coeffs)


def _snapshot(state):
    return Snapshot(
        time=state.time,
        omega=_compact(state.omega),
        theta=_compact(state.theta),
        advection=advection_term(state.omega),
        contour=state.contour,
        epoch=state.epoch,
        u_sup=velocity_sup(state.omega),
        u_sup_running=state.u_sup_running,
    )


def _trace_row(state):
    if state.contour is None:
        return (state.time, np.nan, np.nan, velocity_sup(state.omega))
    _, kappa = geo.tangents_and_curvature(state.contour)
    return (state.time, float(np.max(np.abs(kappa))), state.contour.area, velocity_sup(state.omega))


def initial_state(config):
    omega = initial_vorticity(config)
    contour = initial_contour(config)
    theta = _theta_of(contour, config.grid, config.raster_width)
    return SimState(0.0, omega, contour, theta, velocity_sup(omega), 0)


def run(config, progress=None):
    """Integrate from 0 to ``T`` and store a snapshot every ``snapshot_stride`` steps.

    The final state is always stored.
    """
    state = initial_state(config)
    hist = RunHistory(config)
    hist.append(_snapshot(state))
    hist.trace.append(_trace_row(state))
    nsteps = int(round(config.T / config.dt))
    if nsteps and abs(nsteps * config.dt - config.T) > 1e-9 * config.T:
        raise ConfigurationError(f"T = {config.T} is not a multiple of dt = {config.dt}")
    for n in range(1, nsteps + 1):
        state = step(state, config.dt, config.cfl_safety, config.raster_width, config.gravity)
        state = replace(state, time=n * config.dt)
        hist.trace.append(_trace_row(state))
        if n % config.snapshot_stride == 0 or n == nsteps:
            hist.append(_snapshot(state))
        if progress is not None:
            progress(n, nsteps)
    return hist


def run_passive(contour, velocity, dt, steps, stride=1, velocity_gradient=None):
    """Markers moved by a prescribed velocity; snapshots carry contours only."""
    hist = RunHistory(None)
    t = 0.0
    hist.append(Snapshot(0.0, None, None, None, contour, 0, np.nan, np.nan))
    for n in range(1, steps + 1):
        contour = advect_contour(contour, velocity, dt, t)
        t = n * dt
        if n % stride == 0 or n == steps:
            hist.append(Snapshot(t, None, None, None, contour, 0, np.nan, np.nan))
    return hist


# splitting -------------------------------------------------------------------


def _phi1(z):
    small = np.abs(z) < 1e-8
    zz = np.where(small, 1.0, z)
    return np.where(small, 1 + z / 2, np.expm1(zz) / zz)


def _phi2(z):
    small = np.abs(z) < 1e-2
    zz = np.where(small, 1.0, z)
    series = 1 / 2 + z / 6 + z**2 / 24 + z**3 / 120 + z**4 / 720 + z**5 / 5040
    return np.where(small, series, (np.expm1(zz) - zz) / (zz * zz))


def splitting_series(h):
    """Yield ``(time, w1, w2, w3)`` coefficients at every snapshot.

    ``w1 = e^{t Delta} omega_0``; ``w2`` and ``w3`` solve the forced heat
    equation from zero data with forcings ``-u . grad omega`` and
    ``g d_1 theta``.  The forcing is interpolated linearly in time between
    snapshots and integrated exactly against the heat multiplier.
    """
    snaps = h.snapshots
    g = snaps[0].omega.grid
    lam = g.k_squared
    gravity = h.config.gravity if h.config is not None else 1.0
    w0 = snaps[0].omega.coeffs
    w2 = np.zeros_like(w0)
    w3 = np.zeros_like(w0)

    def forcing(s):
        return -s.advection, gravity * sp.derivative(s.theta, 1).coeffs

    f2, f3 = forcing(snaps[0])
    yield snaps[0].time, w0, w2, w3
    for prev, cur in zip(snaps[:-1], snaps[1:]):
        dt = cur.time - prev.time
        z = -lam * dt
        e = np.exp(z)
        p1 = dt * _phi1(z)
        p2 = dt * _phi2(z)
        g2, g3 = forcing(cur)
        w2 = e * w2 + p1 * f2 + p2 * (g2 - f2)
        w3 = e * w3 + p1 * f3 + p2 * (g3 - f3)
        f2, f3 = g2, g3
        yield cur.time, np.exp(-lam * (cur.time - snaps[0].time)) * w0, w2, w3


def vorticity_splitting(h, t):
    """Split pieces ``(w1, w2, w3)`` at snapshot time ``t`` and the relative L2 residual."""
    k = h.index(t)
    g = h.snapshots[0].omega.grid
    for i, (_, w1, w2, w3) in enumerate(splitting_series(h)):
        if i == k:
            pieces = tuple(sp.SpectralField.from_coeffs(g, w) for w in (w1, w2, w3))
            return pieces, splitting_residual(h.snapshots[k].omega, pieces)
    raise HistoryError(t)


def splitting_residual(omega, pieces):
    total = pieces[0] + pieces[1] + pieces[2]
    norm = omega.l2_norm_spectral()
    diff = (omega - total).l2_norm_spectral()
    return diff / norm if norm > 0 else diff


def velocity_hessian(omega):
    """``(grad^2 u)_ijk = d_k d_j u_i`` for the six index triples with ``j <= k``."""
    u = sp.biot_savart(omega)
    out = {}
    for idx in HESSIAN_INDICES:
        i, j, k = (int(ch) for ch in idx)
        out[idx] = sp.derivative(sp.derivative(u[i - 1], j), k)
    return out


@dataclass(frozen=True)
class Hessians:
    u: dict
    v1: dict
    v2: dict
    v3: dict

    def sups(self):
        return tuple(max(f.sup_norm() for f in part.values()) for part in (self.u, self.v1, self.v2, self.v3))


def second_derivs_velocity(h, t):
    """Velocity Hessian of the full flow and of the three split pieces at time ``t``."""
    pieces, _ = vorticity_splitting(h, t)
    return Hessians(velocity_hessian(h.at(t).omega), *(velocity_hessian(p) for p in pieces))


# energy ------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyReport:
    times: np.ndarray
    energy: np.ndarray
    grad_integral: np.ndarray
    balance_lhs: np.ndarray
    balance_rhs: np.ndarray
    energy_bound: np.ndarray
    grad_bound: np.ndarray
    theta_l2: np.ndarray
    theta_sup: np.ndarray
    flags: dict
    slack: float

    @property
    def passed(self):
        return all(bool(np.all(v)) for v in self.flags.values())


def energy_check(h, slack=0.01):
    """Energy inequalities at every snapshot with relative ``slack``.

    Checked in integrated form: the energy balance
    ``E(t)/2 - E(0)/2 + int |grad u|^2 <= int |theta_0| |u|``, the Grönwall
    bounds on ``|u(t)|^2`` and ``int_0^t |grad u|^2``, and that the L2 and
    sup norms of the temperature do not grow.  ``E = |u|_{L2}^2`` and
    ``|grad u|_{L2} = |omega|_{L2}`` on the periodic box; time integrals use
    the trapezoid rule over snapshots.  Bounds get the relative ``slack``;
    the balance gets ``slack`` times the sum of the magnitudes of its terms.
    """
    snaps = h.snapshots
    if not snaps:
        raise ValueError("empty history")
    t = h.times
    energy = np.array([sum(f.l2_norm_spectral() ** 2 for f in sp.biot_savart(s.omega)) for s in snaps])
    enstrophy = np.array([s.omega.l2_norm_spectral() ** 2 for s in snaps])
    th_l2 = np.array([s.theta.l2_norm_spectral() for s in snaps])
    th_sup = np.array([s.theta.sup_norm() for s in snaps])

    def cumtrapz(y):
        return np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (y[1:] + y[:-1]))])

    grad_int = cumtrapz(enstrophy)
    th0 = th_l2[0]
    lhs = 0.5 * (energy - energy[0]) + grad_int
    rhs = cumtrapz(th0 * np.sqrt(energy))
    e_bound = (energy[0] + th0**2) * np.exp(t) - th0**2
    g_bound = 0.5 * (energy[0] + th0**2) * np.exp(t)
    tiny = 1e-12
    flags = {
        # the balance is an equality when theta = 0, so its slack scales with the terms
        "energy_balance": lhs <= rhs + slack * (0.5 * np.abs(energy - energy[0]) + grad_int + rhs) + tiny,
        "energy_bound": energy <= (1 + slack) * e_bound + tiny,
        "grad_bound": grad_int <= (1 + slack) * g_bound + tiny,
        "theta_l2": th_l2 <= (1 + slack) * th0 + tiny,
        "theta_sup": th_sup <= (1 + slack) * th_sup[0] + tiny,
    }
    return EnergyReport(t, energy, grad_int, lhs, rhs, e_bound, g_bound, th_l2, th_sup, flags, slack)


# tangent transport -------------------------------------------------------------


def _expm_traceless(A):
    """``exp(A)`` for a stack of 2x2 matrices with zero trace."""
    det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
    s2 = -det
    s = np.sqrt(np.abs(s2))
    small = s < 1e-6
    ss = np.where(small, 1.0, s)
    c = np.where(s2 >= 0, np.cosh(s), np.cos(s))
    q = np.where(s2 >= 0, np.sinh(ss) / ss, np.sin(ss) / ss)
    c = np.where(small, 1 + s2 / 2, c)
    q = np.where(small, 1 + s2 / 6, q)
    return c[:, None, None] * np.eye(2) + q[:, None, None] * A


def grad_u_at(omega, points):
    """``(grad u)_{ab} = d_b u_a`` at points, shape (m, 2, 2)."""
    u = sp.biot_savart(omega)
    fields = [sp.derivative(u[a], b) for a in range(2) for b in (1, 2)]
    vals, _ = sp.evaluate_many(fields, points)
    return vals.T.reshape(len(points), 2, 2)


@dataclass(frozen=True)
class TangentReport:
    times: np.ndarray
    max_angle_deg: np.ndarray
    min_ratio: np.ndarray
    max_ratio: np.ndarray

    @property
    def worst_angle_deg(self):
        return float(np.max(self.max_angle_deg))


def tangent_field_evolve(h, velocity_gradient=None):
    """Transport ``W`` by ``dW/dt = grad u . W`` along the markers and compare with ``dz/dalpha``.

    ``W`` starts from the contour tangent and is advanced between snapshots
    with the exponential midpoint rule; it is reseeded whenever the
    contour is resampled.  ``velocity_gradient(points, t)`` overrides the
    snapshot vorticity as the source of ``grad u``.
    """
    snaps = h.snapshots

    def grad_at(s):
        if velocity_gradient is not None:
            return velocity_gradient(s.contour.nodes, s.time)
        return grad_u_at(s.omega, s.contour.nodes)

    W = snaps[0].contour.sample(order=1).copy()
    A_prev = grad_at(snaps[0])
    times, angles, rmin, rmax = [snaps[0].time], [0.0], [1.0], [1.0]
    for prev, cur in zip(snaps[:-1], snaps[1:]):
        A_cur = grad_at(cur)
        if cur.epoch != prev.epoch:
            W = cur.contour.sample(order=1).copy()
        else:
            P = _expm_traceless((cur.time - prev.time) * 0.5 * (A_prev + A_cur))
            W = np.einsum("mab,mb->ma", P, W)
        A_prev = A_cur
        T = cur.contour.sample(order=1)
        cross = W[:, 0] * T[:, 1] - W[:, 1] * T[:, 0]
        dot = np.sum(W * T, axis=1)
        ang = np.degrees(np.abs(np.arctan2(cross, dot)))
        ratio = np.hypot(*W.T) / np.hypot(*T.T)
        times.append(cur.time)
        angles.append(float(ang.max()))
        rmin.append(float(ratio.min()))
        rmax.append(float(ratio.max()))
    return TangentReport(np.array(times), np.array(angles), np.array(rmin), np.array(rmax))


# diagnostics --------------------------------------------------------------------

DIAG_COLUMNS = (
    "time", "energy", "grad_energy_integral", "sup_u", "max_curvature", "inf_tangent",
    "holder_seminorm", "delta", "area", "splitting_residual", "sup_hess_u", "sup_hess_v1",
    "sup_hess_v2", "sup_hess_v3",
)


def diagnostics(h, gamma=None):
    """One row per snapshot with the columns of ``DIAG_COLUMNS``.

    ``delta`` is the running minimum of the cutoff over the snapshots so far.
    """
    if not h.snapshots:
        return []
    gamma = h.config.gamma if gamma is None and h.config is not None else (gamma or 0.5)
    energy = energy_check(h)
    rows = []
    delta_run = np.inf
    g = h.snapshots[0].omega.grid
    for s, (_, w1, w2, w3), e, gi in zip(h.snapshots, splitting_series(h), energy.energy, energy.grad_integral):
        pieces = tuple(sp.SpectralField.from_coeffs(g, w) for w in (w1, w2, w3))
        hs = Hessians(velocity_hessian(s.omega), *(velocity_hessian(p) for p in pieces)).sups()
        if s.contour is not None:
            st = geo.regularity_stats(s.contour, gamma)
            delta_run = min(delta_run, st.delta)
            geo_cols = (st.max_curvature, st.inf_tangent, st.holder_seminorm, delta_run, st.area)
        else:
            geo_cols = (np.nan,) * 5
        rows.append((s.time, e, gi, s.u_sup, *geo_cols, splitting_residual(s.omega, pieces), *hs))
    return rows
