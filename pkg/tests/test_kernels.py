import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bousspatch import kernels as K


def test_heat_kernel_values():
    assert K.heat_kernel([0.0, 0.0], 1.0) == pytest.approx(1 / (4 * math.pi), rel=1e-15)
    assert K.heat_kernel([2.0, 0.0], 1.0) == pytest.approx(math.exp(-1) / (4 * math.pi), rel=1e-15)
    assert K.heat_kernel([2.0, 0.0], 1.0) == pytest.approx(0.0292749, abs=5e-8)


@pytest.mark.parametrize("t", [0.0, -1.0])
def test_nonpositive_time_is_domain_error(t):
    with pytest.raises(K.DomainError):
        K.heat_kernel([1.0, 0.0], t)
    with pytest.raises(K.DomainError):
        K.heat_kernel_second([1.0, 0.0], t)


@pytest.mark.parametrize("t", [0.01, 0.3, 1.0, 7.0])
def test_heat_kernel_unit_mass(t):
    from scipy import integrate

    val, _ = integrate.quad(
        lambda r: 2 * math.pi * r * K.heat_kernel([r, 0.0], t), 0, np.inf, epsabs=1e-13, epsrel=1e-13
    )
    assert abs(val - 1) < 1e-10


def test_heat_kernel_second_values():
    assert K.heat_kernel_second([0.7, 0.0], 0.4, axes=(1, 2)) == 0.0
    assert K.heat_kernel_second([math.sqrt(2), 0.0], 1.0) == pytest.approx(0.0, abs=1e-17)
    assert K.heat_kernel_second([2.0, 0.0], 1.0) == pytest.approx(math.exp(-1) / (8 * math.pi), rel=1e-14)
    assert K.heat_kernel_second([2.0, 0.0], 1.0) == pytest.approx(0.0146375, abs=5e-8)


def test_heat_kernel_second_matches_finite_differences():
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 20:
        t = rng.uniform(0.2, 2.0)
        x = rng.uniform(-2.5, 2.5, size=2) * math.sqrt(t)
        h = 1e-4 * max(1.0, np.linalg.norm(x))
        e1, e2 = np.array([h, 0.0]), np.array([0.0, h])
        f = lambda p: K.heat_kernel(p, t)
        fd = {
            (1, 1): (f(x + e1) - 2 * f(x) + f(x - e1)) / h**2,
            (2, 2): (f(x + e2) - 2 * f(x) + f(x - e2)) / h**2,
            (1, 2): (f(x + e1 + e2) - f(x + e1 - e2) - f(x - e1 + e2) + f(x - e1 - e2)) / (4 * h * h),
        }
        for axes, ref in fd.items():
            val = K.heat_kernel_second(x, t, axes)
            # stay away from zeros of the polynomial prefactor
            if abs(val) < 1e-3 * K.heat_kernel(x, t) / t:
                continue
            assert abs(val - ref) <= 1e-5 * abs(ref)
        checked += 1


def test_second_derivatives_trace_is_time_derivative():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(50, 2))
    t = rng.uniform(0.05, 3.0, size=50)
    lap = K.heat_kernel_second(x, t, (1, 1)) + K.heat_kernel_second(x, t, (2, 2))
    np.testing.assert_allclose(lap, K.heat_kernel_dt(x, t), rtol=1e-13, atol=1e-16)
    swapped = K.heat_kernel_second(x[:, ::-1], t, (1, 1))
    np.testing.assert_array_equal(K.heat_kernel_second(x, t, (2, 2)), swapped)
    np.testing.assert_array_equal(K.heat_kernel_second(x, t, (2, 1)), K.heat_kernel_second(x, t, (1, 2)))


def test_ball_integral_d11():
    assert K.ball_integral_d11(1.0, 1.0) == pytest.approx(-0.5 * math.exp(-0.25), rel=1e-15)
    assert K.ball_integral_d11(1.0, 1.0) == pytest.approx(-0.3894004, abs=5e-8)
    assert abs(K.ball_integral_d11(1.0, 1e-4)) < 1e-300


def test_ball_integral_d11_matches_quadrature_oracle():
    q = K.space_time_ball_quadrature(lambda x, t: K.heat_kernel_second(x, t), 1.0, 1.0)
    assert abs(q - K.ball_integral_d11(1.0, 1.0)) < 1e-8


def test_exp1_against_mpmath():
    z = np.concatenate([np.logspace(-8, 2.5, 400), np.linspace(0.95, 1.05, 41)])
    ref = np.array([float(mpmath.e1(v)) for v in z])
    np.testing.assert_allclose(K.exp1(z), ref, rtol=5e-15)
    assert K.exp1(1.0) == pytest.approx(0.2193839, abs=5e-8)


def test_inv_laplace_heat_far_field_is_log():
    x = np.array([math.sqrt(40.0), 0.0])  # |x|^2/4t = 10
    assert abs(K.inv_laplace_heat(x, 1.0) - math.log(np.linalg.norm(x)) / (2 * math.pi)) < 1e-6


def test_inv_laplace_heat_laplacian_is_heat_kernel():
    x, t, h = np.array([1.0, 0.5]), 1.0, 1e-3
    f = lambda p: K.inv_laplace_heat(p, t)
    e1, e2 = np.array([h, 0.0]), np.array([0.0, h])
    lap = (f(x + e1) + f(x - e1) + f(x + e2) + f(x - e2) - 4 * f(x)) / h**2
    assert lap == pytest.approx(K.heat_kernel(x, t), rel=1e-4)


def test_inv_laplace_heat_at_unit_similarity_argument():
    x = np.array([0.6, 0.8])  # |x|^2 = 4t for t = 1/4
    expected = (math.log(1.0) + 0.5 * 0.2193839343955203) / (2 * math.pi)
    assert K.inv_laplace_heat(x, 0.25) == pytest.approx(expected, abs=1e-15)
    with pytest.raises(K.DomainError):
        K.inv_laplace_heat([0.0, 0.0], 1.0)


def test_g_function_limits_and_series():
    assert K.g_function(50.0, 1.0) == pytest.approx(1 / 50.0**3, rel=1e-12)
    r = 1e-5
    assert K.g_function(r, 1.0) == pytest.approx(r / 32.0, rel=1e-6)
    assert K.g_function(0.0, 1.0) == 0.0


def test_g_function_continuous_across_series_branch():
    t = 0.7
    r_branch = math.sqrt(4 * t * K.G_SERIES_THRESHOLD)
    below = K.g_function(r_branch * (1 - 1e-12), t)
    above = K.g_function(r_branch * (1 + 1e-12), t)
    assert abs(below - above) < 1e-10 * above
    # series vs mpmath just below the branch
    s = mpmath.mpf(r_branch) ** 2 / (4 * t)
    ref = ((1 - mpmath.exp(-s)) / mpmath.mpf(r_branch) ** 3
           - mpmath.exp(-s) / (4 * t * mpmath.mpf(r_branch)))
    assert below == pytest.approx(float(ref), rel=1e-10)


def test_g_function_nonnegative_on_log_grid():
    r = np.logspace(-3, 1, 100)
    t = np.logspace(-3, 1, 100)
    g = K.g_function(r[:, None], t[None, :])
    assert np.all(g >= 0)


def _nested_fd_oseen(idx, x, t, h=1e-3):
    i, j, k = idx
    phi = lambda p: p[0] / (p @ p) * (1 - math.exp(-(p @ p) / (4 * t))) / (2 * math.pi)
    unit = {1: np.array([1.0, 0.0]), 2: np.array([0.0, 1.0])}

    def d(axis, f):
        return lambda p: (f(p + h * unit[axis]) - f(p - h * unit[axis])) / (2 * h)

    def dperp(axis, f):
        return (lambda p: -d(2, f)(p)) if axis == 1 else d(1, f)

    return d(j, dperp(i, d(k, phi)))(np.asarray(x, float))


@pytest.mark.parametrize("idx", K.OSEEN_INDICES)
def test_oseen_kernel_matches_nested_finite_differences(idx):
    x, t = np.array([0.7, -0.4]), 0.5
    ref = _nested_fd_oseen(idx, x, t)
    assert K.oseen_kernel(idx, x, t) == pytest.approx(ref, rel=1e-3)


def test_oseen_symmetry_table():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(10, 2))
    t = rng.uniform(0.1, 2, size=10)
    k = lambda idx: K.oseen_kernel(idx, x, t)
    np.testing.assert_array_equal(k("121"), k("112"))
    np.testing.assert_array_equal(k("212"), -k("111"))
    np.testing.assert_array_equal(k("221"), -k("111"))
    np.testing.assert_array_equal(k("222"), -k("112"))
    # K_122 is K_111 with the coordinates swapped
    np.testing.assert_allclose(k("122"), K.oseen_kernel("111", x[:, ::-1], t), rtol=1e-12)


@pytest.mark.parametrize("idx", ["111", "122"])
def test_zero_circle_mean(idx):
    mean = K.circle_mean(lambda p, t: K.oseen_kernel(idx, p, t), 1.0, 1.0)
    assert abs(mean) < 1e-12


@pytest.mark.parametrize("idx", K.OSEEN_INDICES)
def test_split_parts(idx):
    a = 2 * np.pi * np.arange(512) / 512
    for r, t in [(1.0, 1.0), (0.05, 0.3), (3.0, 0.2)]:
        star, odd = K.oseen_split(idx, r, a, t)
        assert abs(odd.mean()) < 1e-12
    star, odd = K.oseen_split(idx, 0.5, 1.1, 0.3)
    x = 0.5 * np.array([math.cos(1.1), math.sin(1.1)])
    assert abs(star + odd - K.oseen_kernel(idx, x, 0.3)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(
    r=st.floats(1e-3, 5.0),
    t=st.floats(1e-3, 5.0),
    idx=st.sampled_from(K.OSEEN_INDICES),
)
def test_split_odd_part_has_zero_circle_mean(r, t, idx):
    a = 2 * np.pi * np.arange(64) / 64
    star, odd = K.oseen_split(idx, r, a, t)
    assert abs(odd.mean()) <= 1e-12 * max(1.0, np.abs(odd).max())


def test_oseen_ball_integral_closed_forms():
    e = math.exp(-0.25)
    assert K.oseen_ball_integral("112", 1.0, 1.0) == pytest.approx(e / 8, rel=1e-15)
    assert K.oseen_ball_integral("211", 1.0, 1.0) == pytest.approx(-3 * e / 8, rel=1e-15)
    assert K.oseen_ball_integral("111", 0.3, 2.0) == 0.0
    assert K.oseen_ball_integral("122", 3.0, 0.1) == 0.0
    assert K.oseen_ball_integral("222", 1.0, 1.0) == -K.oseen_ball_integral("112", 1.0, 1.0)


@pytest.mark.parametrize("idx", ["112", "211", "111"])
def test_oseen_ball_integral_matches_quadrature(idx):
    q = K.space_time_ball_quadrature(lambda x, t: K.oseen_kernel(idx, x, t), 1.0, 1.0)
    assert abs(q - K.oseen_ball_integral(idx, 1.0, 1.0)) < 1e-8


def test_star_part_carries_the_ball_integral():
    def star_only(x, t):
        r = np.hypot(x[..., 0], x[..., 1])
        return K.oseen_split("112", r, np.arctan2(x[..., 1], x[..., 0]), t)[0]

    q = K.space_time_ball_quadrature(star_only, 1.0, 1.0)
    assert abs(q - K.oseen_ball_integral("112", 1.0, 1.0)) < 1e-8


def test_kernels_are_pure():
    x = np.array([[0.3, -0.2], [1.0, 2.0]])
    a = K.oseen_kernel("211", x, 0.4)
    b = K.oseen_kernel("211", x.copy(), 0.4)
    np.testing.assert_array_equal(a, b)
