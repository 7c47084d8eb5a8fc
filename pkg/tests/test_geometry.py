import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from bousspatch import geometry as G


def disk_rr(d, r, rho):
    """Exact |R_r| for a probe inside a disk of radius rho at depth d."""
    D0 = rho - d
    c = (rho**2 - D0**2 - r**2) / (2 * r * D0)
    return 2 * abs(np.arcsin(np.clip(c, -1, 1)))


def convex_polygon_contour(seed, N=256):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(30, 2))
    hull = pts[ConvexHull(pts).vertices]
    closed = np.vstack([hull, hull[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    s = np.concatenate([[0], np.cumsum(seg)])
    t = s[-1] * np.arange(N) / N
    return G.Contour(np.column_stack([np.interp(t, s, closed[:, 0]), np.interp(t, s, closed[:, 1])]))


def test_contour_validation():
    with pytest.raises(ValueError):
        G.Contour(np.zeros((24, 2)))
    with pytest.raises(ValueError):
        G.Contour(np.zeros((8, 2)))
    with pytest.raises(G.DegenerateContourError):
        G.tangents_and_curvature(G.Contour(np.zeros((16, 2))))


@pytest.mark.parametrize("R", [0.3, 1.0, 4.0])
def test_circle_curvature(R):
    _, kappa = G.tangents_and_curvature(G.Contour.circle(R, 64))
    assert np.max(np.abs(kappa - 1 / R)) < 1e-10


def test_ellipse_vertex_curvature():
    _, kappa = G.tangents_and_curvature(G.Contour.ellipse(2, 1, 256))
    assert abs(kappa[0] - 2.0) < 1e-8


def test_curvature_converges_spectrally():
    base = G.Contour.ellipse(2, 1, 64)
    err = [abs(G.regularity_stats(G.resample_arclength(base, n), 0.5).max_curvature - 2) for n in (64, 128)]
    assert err[1] * 4 <= err[0]


def test_circle_regularity_and_area():
    st_ = G.regularity_stats(G.Contour.circle(1, 256), 0.5)
    assert st_.inf_tangent == pytest.approx(2 * np.pi, rel=1e-12)
    assert np.isfinite(st_.holder_seminorm) and st_.delta > 0
    assert st_.delta == pytest.approx((st_.inf_tangent / st_.holder_seminorm) ** 2, rel=1e-14)
    assert abs(st_.area - np.pi) < 1e-6


def test_circle_holder_seminorm_closed_form():
    # |z'(a) - z'(b)| = 4 pi sin(pi |a - b|) for the unit circle
    lag = np.arange(1, 129) / 256
    expected = np.max(4 * np.pi * np.sin(np.pi * lag) / lag**0.5)
    st_ = G.regularity_stats(G.Contour.circle(1, 256), 0.5)
    assert st_.holder_seminorm == pytest.approx(expected, rel=1e-12)


def test_holder_seminorm_refinement():
    vals = [G.regularity_stats(G.Contour.ellipse(2, 1, n), 0.5).holder_seminorm for n in (128, 256, 512)]
    assert vals[0] <= vals[1] <= vals[2]
    assert max(vals) / min(vals) - 1 < 0.02


def test_regularity_rejects_gamma():
    with pytest.raises(ValueError):
        G.regularity_stats(G.Contour.circle(), 1.0)


def test_distance_probe_circle():
    p = G.distance_probe([0.5, 0.0], G.Contour.circle(1, 64))
    assert p.d == pytest.approx(0.5, abs=1e-14)
    np.testing.assert_allclose(p.nearest, [1, 0], atol=1e-14)
    np.testing.assert_allclose(p.inward_normal, [-1, 0], atol=1e-14)


def test_distance_probe_tie_rule():
    p = G.distance_probe([0.0, 0.0], G.Contour.circle(2.0, 64))
    assert p.d == pytest.approx(2.0, abs=1e-14)
    assert p.alpha == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_distance_probe_matches_dense_sampling(seed):
    c = convex_polygon_contour(seed)
    dense = c.sample(2**20)
    rng = np.random.default_rng(100 + seed)
    for x in rng.uniform(-2.5, 2.5, size=(5, 2)):
        brute = np.min(np.hypot(*(dense - x).T))
        assert abs(G.distance_probe(x, c).d - brute) < 1e-6


def test_distance_is_one_lipschitz():
    c = G.Contour.star(1.0, 0.25, 5, 256)
    rng = np.random.default_rng(4)
    for _ in range(30):
        x1 = rng.uniform(-1.5, 1.5, 2)
        x2 = x1 + rng.normal(scale=0.05, size=2)
        d1, d2 = G.distance_probe(x1, c).d, G.distance_probe(x2, c).d
        assert abs(d1 - d2) <= np.hypot(*(x1 - x2)) + 1e-12


def test_reversal_flips_raw_normal_and_keeps_inward_normal():
    c = G.Contour.ellipse(1.0, 0.6, 128)
    r = c.reversed()
    assert r.orientation == -c.orientation
    t_c, t_r = c.sample(order=1), r.sample(order=1)
    idx = (-np.arange(c.N)) % c.N
    np.testing.assert_allclose(t_r, -t_c[idx], atol=1e-12)
    x = np.array([0.3, 0.2])
    pc, pr = G.distance_probe(x, c), G.distance_probe(x, r)
    np.testing.assert_allclose(pr.inward_normal, pc.inward_normal, atol=1e-12)
    np.testing.assert_allclose(r.counterclockwise().nodes, c.nodes)


def test_point_in_patch():
    c = G.Contour.circle(1, 256)
    assert G.point_in_patch([0, 0], c) is True
    assert G.point_in_patch([2, 0], c) is False
    assert G.point_in_patch([1.0, 0.0], c) is True


def test_point_in_patch_random_against_disk():
    c = G.Contour.circle(1, 256)
    p = np.random.default_rng(5).uniform(-1.5, 1.5, size=(10_000, 2))
    r = np.hypot(*p.T)
    keep = np.abs(r - 1) > 1e-10
    assert np.array_equal(G.point_in_patch(p, c)[keep], (r <= 1)[keep])


def test_point_in_patch_orientation_free():
    c = G.Contour.star(1.0, 0.3, 4, 128)
    p = np.random.default_rng(6).uniform(-1.5, 1.5, size=(500, 2))
    assert np.array_equal(G.point_in_patch(p, c), G.point_in_patch(p, c.reversed()))


def test_rr_measure_half_plane():
    big = G.Contour.circle(1e4, 256, center=(-1e4, 0.0))
    d = 0.05
    m = G.rr_measure([-d, 0.0], 2 * d, big)
    assert abs(m.measure - np.pi / 3) <= 2 * np.pi / 4096
    assert m.measure <= m.bound


@pytest.mark.parametrize("gamma", [0.25, 0.5, 0.75])
def test_rr_measure_disk_oracle_and_lemma(gamma):
    c = G.Contour.circle(1.0, 256)
    delta = G.regularity_stats(c, gamma).delta
    for d in np.linspace(0.05, 1.0, 4) * delta:
        for r in np.linspace(d, delta, 3):
            m = G.rr_measure([1 - d, 0.0], r, c, gamma=gamma, delta=delta)
            assert abs(m.measure - disk_rr(d, r, 1.0)) <= 2 * np.pi / 4096
            assert m.measure <= m.bound
            assert m.gamma == gamma


def test_circle_arcs_disk():
    c = G.Contour.circle(1.0, 256)
    arcs = G.circle_arcs([0.95, 0.0], 0.1, c)
    assert arcs.shape == (1, 2)
    assert arcs[0, 1] - arcs[0, 0] == pytest.approx(np.pi + disk_rr(0.05, 0.1, 1.0), abs=1e-12)
    assert 0.5 * (arcs[0, 0] + arcs[0, 1]) == pytest.approx(np.pi, abs=1e-12)
    np.testing.assert_array_equal(G.circle_arcs([0.0, 0.0], 0.5, c), [[0, 2 * np.pi]])
    assert G.circle_arcs([3.0, 0.0], 0.5, c).shape == (0, 2)


def test_circle_arcs_agree_with_membership():
    c = G.Contour.star(1.0, 0.3, 5, 256)
    x, r = np.array([0.9, 0.1]), 0.35
    arcs = G.circle_arcs(x, r, c)
    th = np.linspace(0, 2 * np.pi, 2000, endpoint=False) + 1e-4
    inside = G.point_in_patch(x + r * np.column_stack([np.cos(th), np.sin(th)]), c)
    on_arc = np.zeros_like(inside)
    for a, b in arcs:
        on_arc |= (np.mod(th - a, 2 * np.pi) <= b - a)
    assert np.array_equal(inside, on_arc)


def test_resample_circle_equal_spacing():
    c = G.Contour.circle(1.0, 64)
    # distort the parametrization but keep the curve
    a = 2 * np.pi * (np.arange(64) / 64 + 0.05 * np.sin(2 * np.pi * np.arange(64) / 64))
    warped = G.Contour(np.column_stack([np.cos(a), np.sin(a)]))
    out = G.resample_arclength(warped, 64)
    chords = np.hypot(*(np.roll(out.nodes, -1, axis=0) - out.nodes).T)
    assert np.max(np.abs(chords - chords.mean())) < 1e-8
    assert np.max(np.abs(np.hypot(*out.nodes.T) - 1)) < 1e-8
    assert out.N == c.N


def test_resample_area_idempotency_and_speed():
    e = G.Contour.ellipse(2, 1, 256)
    r1 = G.resample_arclength(e)
    assert abs(r1.area - e.area) / e.area < 1e-10
    r2 = G.resample_arclength(r1)
    assert np.max(np.abs(r2.nodes - r1.nodes)) < 1e-10
    speed = np.hypot(*r1.sample(order=1).T)
    assert speed.min() / speed.max() > 0.999


def test_csv_roundtrip(tmp_path):
    c = G.Contour.star(1.0, 0.2, 3, 64)
    c.to_csv(tmp_path / "c.csv")
    back = G.Contour.from_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.nodes, c.nodes)


@settings(max_examples=20, deadline=None)
@given(
    cx=st.floats(-3, 3),
    cy=st.floats(-3, 3),
    R=st.floats(0.2, 5),
    s=st.floats(0.01, 0.99),
)
def test_area_is_translation_invariant_and_exact_for_circles(cx, cy, R, s):
    c = G.Contour.circle(R, 64, center=(cx, cy))
    assert c.area == pytest.approx(np.pi * R * R, rel=1e-12)
    p = G.distance_probe(np.array([cx + s * R, cy]), c)
    assert p.d == pytest.approx((1 - s) * R, rel=1e-9, abs=1e-12)
    assert np.hypot(*p.inward_normal) == pytest.approx(1.0, abs=1e-14)
