import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bousspatch import geometry as geo
from bousspatch import solver as so
from bousspatch import spectral as sp


def taylor_green_config(n=128, T=0.5, dt=0.005):
    return so.SimConfig(
        grid=sp.Grid(n, 2 * np.pi), dt=dt, T=T,
        initial_velocity=("taylor_green", {}), initial_contour=("none", {}),
    )


@pytest.fixture(scope="module")
def small_run():
    cfg = so.SimConfig(grid=sp.Grid(64, 8.0), dt=0.01, T=0.2, contour_nodes=128, raster_width=1.0)
    return so.run(cfg)


def test_config_validation():
    with pytest.raises(so.ConfigurationError):
        so.SimConfig(dt=0.0)
    with pytest.raises(so.ConfigurationError):
        so.SimConfig(raster_width=0.5)
    with pytest.raises(so.ConfigurationError):
        so.SimConfig(gamma=1.0)
    with pytest.raises(so.ConfigurationError):
        so.SimConfig(initial_contour=("triangle", {}))


# rasterization


def test_raster_disk_area():
    g = sp.Grid(256, 8.0)
    th = so.rasterize_patch(geo.Contour.circle(1.0, 512, (4.0, 4.0)), g, 2)
    assert abs(th.values.sum() * g.h**2 - np.pi) < 0.01 * np.pi


def test_raster_deep_points_are_exact():
    g = sp.Grid(256, 8.0)
    th = so.rasterize_patch(geo.Contour.circle(1.0, 512, (4.0, 4.0)), g, 2).values
    x1, x2 = g.nodes
    r = np.hypot(x1 - 4, x2 - 4)
    assert np.all(np.abs(th[r < 0.5] - 1) <= 1e-12)
    assert np.all(np.abs(th[r > 1.5]) <= 1e-12)
    assert th.min() >= 0 and th.max() <= 1


def test_raster_width_refinement():
    g = sp.Grid(256, 8.0)
    c = geo.Contour.circle(1.0, 512, (4.0, 4.0))
    err = [abs(so.rasterize_patch(c, g, w).values.sum() * g.h**2 - c.area) for w in (4, 2, 1)]
    assert err[0] >= 2 * err[1] and err[1] >= 2 * err[2]


def test_raster_matches_signed_distance_oracle():
    g = sp.Grid(128, 8.0)
    c = geo.Contour.star(1.2, 0.25, 5, 256, (4.0, 4.0))
    w = 2.0
    th = so.rasterize_patch(c, g, w).values
    x1, x2 = g.nodes
    pts = np.column_stack([x1.ravel(), x2.ravel()])
    s = so.signed_distance(pts, c)
    ref = 0.5 * (1 + np.tanh(2 * s / (w * g.h)))
    assert np.max(np.abs(th.ravel() - ref)) < 1e-7


def test_raster_rejects_contour_near_edge():
    with pytest.raises(so.ConfigurationError):
        so.rasterize_patch(geo.Contour.circle(1.0, 64, (1.0, 4.0)), sp.Grid(64, 8.0), 2)


@settings(max_examples=15, deadline=None)
@given(r=st.floats(0.3, 1.2), cx=st.floats(3.8, 4.2), w=st.floats(1, 4))
def test_raster_values_in_unit_interval(r, cx, w):
    # band = 10 w h <= 2.5 keeps the patch inside the admissible box
    th = so.rasterize_patch(geo.Contour.circle(r, 128, (cx, 4.0)), sp.Grid(128, 8.0), w).values
    assert th.min() >= 0 and th.max() <= 1


# tendency


def test_rhs_taylor_green_is_zero():
    g = sp.Grid(64, 2 * np.pi)
    om = sp.SpectralField.from_function(g, lambda x, y: 2 * np.sin(x) * np.sin(y))
    state = so.SimState(0.0, om, None, sp.SpectralField.zeros(g), 0.0)
    assert np.max(np.abs(so.rhs(state))) < 1e-10


def test_rhs_pure_buoyancy_and_uniform_theta():
    g = sp.Grid(64, 8.0)
    th = so.rasterize_patch(geo.Contour.circle(1.0, 128, (4.0, 4.0)), g, 2)
    state = so.SimState(0.0, sp.SpectralField.zeros(g), None, th, 0.0)
    np.testing.assert_array_equal(so.rhs(state), sp.derivative(th, 1).coeffs)
    flat = so.SimState(0.0, sp.SpectralField.zeros(g), None, sp.SpectralField.from_values(g, np.ones(g.shape)), 0.0)
    assert np.max(np.abs(so.rhs(flat))) == 0.0


def test_etd_coefficients_limits():
    g = sp.Grid(32, 2 * np.pi)
    dt = 0.01
    E, E2, Q, f1, f2, f3 = so.etd_coefficients(g, dt)
    # zero mode: phi-type weights reduce to the RK4 weights
    assert E[0, 0] == pytest.approx(1.0)
    assert Q[0, 0] == pytest.approx(dt / 2, rel=1e-13)
    assert f1[0, 0] == pytest.approx(dt / 6, rel=1e-13)
    assert f2[0, 0] == pytest.approx(dt / 6, rel=1e-13)
    assert f3[0, 0] == pytest.approx(dt / 6, rel=1e-13)
    z = -g.k_squared[3, 4] * dt
    assert f2[3, 4] == pytest.approx(dt * (2 + z + np.exp(z) * (z - 2)) / z**3, rel=1e-10)


# stepping


def test_taylor_green_decay():
    h = so.run(taylor_green_config())
    x, y = h.snapshots[0].omega.grid.nodes
    exact = 2 * np.sin(x) * np.sin(y) * np.exp(-1.0)
    assert np.max(np.abs(h.snapshots[-1].omega.values - exact)) < 1e-6


def test_zero_flow_leaves_contour_unchanged():
    cfg = so.SimConfig(grid=sp.Grid(64, 8.0), dt=0.01, T=0.05, contour_nodes=64, raster_width=1.0, gravity=0.0)
    h = so.run(cfg)
    assert np.max(np.abs(h.snapshots[-1].contour.nodes - h.snapshots[0].contour.nodes)) <= 1e-14
    assert np.max(np.abs(h.snapshots[-1].omega.values)) == 0.0


def test_passive_rigid_rotation():
    c0 = geo.Contour.circle(1.0, 64, (4.0, 4.0))
    steps = 1000
    h = so.run_passive(c0, lambda z, t: np.column_stack([-(z[:, 1] - 4), z[:, 0] - 4]), 2 * np.pi / steps, steps, 100)
    for s in h.snapshots:
        r = np.hypot(*(s.contour.nodes - 4).T)
        assert np.max(np.abs(r - 1)) < 1e-10
    np.testing.assert_allclose(h.snapshots[-1].contour.nodes, c0.nodes, atol=1e-9)


def test_cfl_violation_names_admissible_dt():
    cfg = taylor_green_config(n=64)
    state = so.initial_state(cfg)
    with pytest.raises(so.CflError, match="admissible dt"):
        so.step(state, 1.0)


def test_run_horizon_zero_keeps_initial_snapshot():
    h = so.run(so.SimConfig(grid=sp.Grid(64, 8.0), T=0.0, contour_nodes=64, raster_width=1.0))
    assert len(h.snapshots) == 1 and h.snapshots[0].time == 0.0


def test_run_is_deterministic():
    cfg = so.SimConfig(grid=sp.Grid(64, 8.0), dt=0.01, T=0.03, contour_nodes=64, raster_width=1.0)
    a, b = so.run(cfg), so.run(cfg)
    for sa, sb in zip(a.snapshots, b.snapshots):
        assert np.array_equal(sa.omega.coeffs, sb.omega.coeffs)
        assert np.array_equal(sa.contour.nodes, sb.contour.nodes)
    assert a.trace == b.trace


def test_history_times_and_lookup(small_run):
    t = small_run.times
    assert np.all(np.diff(t) > 0)
    assert small_run.at(0.1).time == pytest.approx(0.1)
    with pytest.raises(so.HistoryError):
        small_run.at(0.123)
    running = [s.u_sup_running for s in small_run.snapshots]
    assert np.all(np.diff(running) >= 0)


def test_area_conserved_on_small_run(small_run):
    a = [s.contour.area for s in small_run.snapshots]
    assert abs(a[-1] - a[0]) / a[0] < 1e-3


# splitting and Hessians


def test_splitting_at_time_zero(small_run):
    (w1, w2, w3), res = so.vorticity_splitting(small_run, 0.0)
    np.testing.assert_array_equal(w1.coeffs, small_run.snapshots[0].omega.coeffs)
    assert not np.any(w2.coeffs) and not np.any(w3.coeffs)


def test_splitting_without_temperature():
    g = sp.Grid(64, 2 * np.pi)
    cfg = so.SimConfig(grid=g, dt=0.01, T=0.1, initial_velocity=("taylor_green", {}), initial_contour=("none", {}))
    h = so.run(cfg)
    (w1, w2, w3), res = so.vorticity_splitting(h, 0.1)
    assert not np.any(w3.coeffs)
    assert res < 1e-10


def test_splitting_residual_small(small_run):
    _, res = so.vorticity_splitting(small_run, 0.2)
    assert res < 1e-3
    with pytest.raises(so.HistoryError):
        so.vorticity_splitting(small_run, 0.205)


def test_hessian_single_mode():
    g = sp.Grid(32, 2 * np.pi)
    om = sp.SpectralField.from_function(g, lambda x, y: np.cos(2 * x + 3 * y))
    H = so.velocity_hessian(om)
    x, y = g.nodes
    # psi = -cos(2x+3y)/13, u1 = -d2 psi, u2 = d1 psi
    ph = 2 * x + 3 * y
    u = {1: lambda: -3 / 13 * np.sin(ph), 2: lambda: 2 / 13 * np.sin(ph)}
    k = {1: 2, 2: 3}
    for idx, f in H.items():
        i, j, l = (int(ch) for ch in idx)
        expected = -k[j] * k[l] * u[i]()
        assert np.max(np.abs(f.values - expected)) < 1e-13


def test_hessian_mixed_partials_commute(small_run):
    om = small_run.snapshots[-1].omega
    u1, u2 = sp.biot_savart(om)
    for u in (u1, u2):
        a = sp.derivative(sp.derivative(u, 1), 2)
        b = sp.derivative(sp.derivative(u, 2), 1)
        assert np.max(np.abs(a.values - b.values)) <= 1e-12 * max(1.0, a.sup_norm())


def test_split_hessians_sum_to_full(small_run):
    H = so.second_derivs_velocity(small_run, 0.2)
    for idx in so.HESSIAN_INDICES:
        total = H.v1[idx] + H.v2[idx] + H.v3[idx]
        assert np.max(np.abs(total.values - H.u[idx].values)) <= 1e-3 * H.u[idx].sup_norm()
    assert len(H.sups()) == 4


# energy


def test_energy_taylor_green_exact_decay():
    h = so.run(taylor_green_config(n=64, T=0.2, dt=0.01))
    rep = so.energy_check(h)
    assert rep.passed
    np.testing.assert_allclose(rep.energy, rep.energy[0] * np.exp(-4 * rep.times), rtol=1e-10)


def test_energy_zero_data():
    cfg = so.SimConfig(grid=sp.Grid(64, 8.0), dt=0.01, T=0.03, initial_contour=("none", {}))
    rep = so.energy_check(so.run(cfg))
    assert rep.passed
    assert not np.any(rep.energy) and not np.any(rep.grad_integral) and not np.any(rep.theta_l2)


def test_energy_inequalities_small_run(small_run):
    rep = so.energy_check(small_run)
    assert rep.passed, {k: v.tolist() for k, v in rep.flags.items() if not np.all(v)}


# tangent transport


def test_tangent_rigid_rotation():
    c0 = geo.Contour.ellipse(1.0, 0.6, 128, (4.0, 4.0))
    steps = 1000
    dt = 2 * np.pi / steps
    A = np.array([[0.0, -1.0], [1.0, 0.0]])
    h = so.run_passive(c0, lambda z, t: (z - 4) @ A.T, dt, steps, 10)
    rep = so.tangent_field_evolve(h, velocity_gradient=lambda z, t: np.broadcast_to(A, (len(z), 2, 2)))
    assert np.radians(rep.worst_angle_deg) < 1e-8
    assert np.max(np.abs(rep.max_ratio - 1)) < 1e-8 and np.max(np.abs(rep.min_ratio - 1)) < 1e-8


def test_tangent_zero_velocity():
    c0 = geo.Contour.star(1.0, 0.2, 3, 64, (4.0, 4.0))
    h = so.run_passive(c0, lambda z, t: np.zeros_like(z), 0.1, 5)
    rep = so.tangent_field_evolve(h, velocity_gradient=lambda z, t: np.zeros((len(z), 2, 2)))
    assert rep.worst_angle_deg == 0.0
    assert np.all(rep.min_ratio == 1.0) and np.all(rep.max_ratio == 1.0)


def test_tangent_small_run(small_run):
    assert so.tangent_field_evolve(small_run).worst_angle_deg < 0.5


# diagnostics


def test_diagnostics_rows(small_run):
    rows = so.diagnostics(small_run)
    assert len(rows) == len(small_run.snapshots)
    assert all(len(r) == len(so.DIAG_COLUMNS) == 14 for r in rows)
    delta = [r[so.DIAG_COLUMNS.index("delta")] for r in rows]
    assert np.all(np.diff(delta) <= 0)


def test_raster_band_touching_box_edge():
    g = sp.Grid(64, 8.0)
    # the band reaches the last node; translation by whole cells is exact
    edge = so.rasterize_patch(geo.Contour.circle(0.4, 128, (5.0, 4.5)), g, 2.0).values
    mid = so.rasterize_patch(geo.Contour.circle(0.4, 128, (4.0, 4.0)), g, 2.0).values
    assert np.max(np.abs(edge - np.roll(mid, (8, 4), axis=(0, 1)))) < 1e-12
