import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from linboltz import fokker_planck as fp
from linboltz.core import GaussianMixture, GridSpec, Maxwellian, make_rng
from linboltz.functionals import relative_entropy
from linboltz.simulate import fit_log_linear
from linboltz.suites import default_suite

M3 = Maxwellian(3)
vec3 = st.lists(st.floats(-4, 4), min_size=3, max_size=3).map(np.array)


def moments_by_quadrature(a, g):
    """Radial/polar quadrature of int |w|^3 e^{-g|w+a|^2} dw and of its a^ a^ and perpendicular parts."""
    na = float(np.linalg.norm(a))

    def rad(r, k, p):
        # |w + a|^2 = r^2 + na^2 + 2 r na c
        ang = integrate.quad(lambda c: c ** k * math.exp(-g * (r * r + na * na + 2 * r * na * c)), -1, 1,
                             epsabs=0, epsrel=1e-12)[0]
        return 2 * math.pi * r ** p * ang

    s = integrate.quad(rad, 0, np.inf, args=(0, 5), epsabs=0, epsrel=1e-11)[0]
    par = integrate.quad(rad, 0, np.inf, args=(2, 5), epsabs=0, epsrel=1e-11)[0]
    return s, par, (s - par) / 2


# -- scalar functions ------------------------------------------------------------


@pytest.mark.parametrize("a", [(0.0, 0, 0), (0.05, 0, 0), (0.3, -0.2, 0.1), (1.5, 0, 0), (0, 3.0, 1.0)])
@pytest.mark.parametrize("gB", [0.5, 0.25])
def test_moments_against_quadrature(a, gB):
    a = np.array(a)
    s, m = fp.cubic_moments(a, gB)
    qs, qpar, qperp = moments_by_quadrature(a, gB)
    assert s == pytest.approx(qs, rel=1e-8)
    ahat = a / np.linalg.norm(a) if np.any(a) else np.array([1.0, 0, 0])
    assert ahat @ m @ ahat == pytest.approx(qpar, rel=1e-8)
    e = np.cross(ahat, [0.3, 0.5, 0.7])
    e /= np.linalg.norm(e)
    assert e @ m @ e == pytest.approx(qperp, rel=1e-8)


@settings(max_examples=50, deadline=None)
@given(vec3)
def test_moment_trace_identity(a):
    s, m = fp.cubic_moments(a, 0.5)
    assert np.trace(m) == pytest.approx(s, rel=1e-10)
    np.testing.assert_allclose(m, m.T)


def test_moments_monte_carlo_oracle():
    a = np.array([0.7, -0.4, 1.1])
    s, m = fp.cubic_moments(a, 0.5)
    s_mc, s_se, m_mc, m_se = fp.cubic_moments_mc(a, 0.5, 2_000_000, seed=3)
    assert s == pytest.approx(s_mc, abs=4 * s_se)
    assert np.all(np.abs(m - m_mc) <= 4 * m_se + 1e-12)


@pytest.mark.parametrize("func", [fp.S3, fp.P_PERP, fp.Q_PAR, fp.C_FUNC, fp.T_FUNC, fp.C_FUNC_LEGACY],
                         ids=lambda f: f.name)
@pytest.mark.parametrize("deriv", [0, 1, 2])
def test_series_seam_is_continuous(func, deriv):
    assert func.seam_jump(deriv) <= 1e-9


def test_series_matches_closed_form_above_seam():
    x = np.linspace(0.1, 0.3, 11)
    for func in (fp.C_FUNC, fp.T_FUNC, fp.S3):
        for k in range(3):
            np.testing.assert_allclose(func._series(x, k), func._closed(x, k), rtol=1e-9, atol=1e-9)


def test_derivatives_by_finite_differences():
    x = np.linspace(0.2, 5.0, 17)
    h = 1e-5
    for func in (fp.C_FUNC, fp.T_FUNC):
        np.testing.assert_allclose(func(x, 1), (func(x + h) - func(x - h)) / (2 * h), rtol=1e-7)
        np.testing.assert_allclose(func(x, 2), (func(x + h, 1) - func(x - h, 1)) / (2 * h), rtol=1e-6)


def test_C_positive_T_nonnegative():
    x = fp.default_x_grid(500, 500)
    assert np.all(fp.C_FUNC(x) > 0)
    assert np.all(fp.T_FUNC(x) >= 0)
    assert fp.T_FUNC(np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-14)


def test_legacy_C_closed_form():
    x = np.linspace(0.2, 6.0, 30)
    E = math.sqrt(math.pi) * np.vectorize(math.erf)(x) / x
    legacy_C = np.exp(-x ** 2) * (1 + 1 / (2 * x ** 2)) + E * (1.75 * x ** 2 + 1 - 1 / (4 * x ** 2))
    np.testing.assert_allclose(fp.C_FUNC_LEGACY(x), legacy_C, rtol=1e-12)


def test_bakry_emery_scan_corrected():
    scan = fp.bakry_emery_scan(1.0)
    assert scan.min_A >= fp.ALPHA1_BOUND
    assert scan.min_AmB >= fp.ALPHA2_BOUND
    assert scan.min_A == pytest.approx(4.7862, abs=1e-3)
    assert scan.argmin_A == pytest.approx(0.617, abs=5e-3)
    assert scan.alpha == pytest.approx(0.4774, abs=1e-3)
    assert scan.seam_jump <= 1e-9
    assert scan.min_C > 0 and scan.min_T >= 0


def test_bakry_emery_scan_legacy_variant():
    scan = fp.bakry_emery_scan(1.0, variant="legacy")
    assert scan.min_A >= fp.ALPHA1_BOUND and scan.min_AmB >= fp.ALPHA2_BOUND
    assert scan.min_A == pytest.approx(3.165, abs=2e-3)
    assert scan.alpha_bound == pytest.approx(7 / 24 * math.sqrt(2 / math.pi))
    assert scan.alpha_bound == pytest.approx(0.2327, abs=1e-4)


def test_scan_alpha_scales_with_sqrt_theta():
    a1 = fp.bakry_emery_scan(1.0, fp.default_x_grid(200, 200)).alpha
    a2 = fp.bakry_emery_scan(2.0, fp.default_x_grid(200, 200)).alpha
    assert a2 / a1 == pytest.approx(math.sqrt(2), rel=1e-12)


def test_scan_rejects_nonpositive_grid():
    with pytest.raises(ValueError):
        fp.bakry_emery_scan(1.0, np.array([0.0, 1.0]))


# -- diffusion matrices ------------------------------------------------------------------


@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
def test_D0_at_center_is_isotropic(theta):
    M = Maxwellian(3, (0.2, 0, -1), theta)
    np.testing.assert_allclose(fp.diffusion_matrix_closed(0, M, M.center), theta / 4 * np.eye(3), atol=1e-15)


def test_D0_radial_direction():
    v = np.array([1.0, 2.0, -0.5])
    D = fp.diffusion_matrix_closed(0, M3, v)
    np.testing.assert_allclose(D @ v, M3.theta / 4 * v, rtol=1e-14)
    np.testing.assert_allclose(fp.s_matrix(v, M3.center) @ v, 0.0, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(vec3)
def test_diffusion_matrices_symmetric_positive(v):
    for gamma in (0, 1):
        D = fp.diffusion_matrix_closed(gamma, M3, v)
        np.testing.assert_allclose(D, D.T, atol=1e-14)
        assert np.min(np.linalg.eigvalsh(D)) > 0


@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
def test_D1_at_center(theta):
    # (1/8) E|q|^3 (2/3) with |q| ~ sqrt(theta) chi_3 and E chi_3^3 = 8 sqrt(2/pi)
    M = Maxwellian(3, None, theta)
    expect = 0.125 * (2 / 3) * 8 * math.sqrt(2 / math.pi) * theta ** 1.5
    np.testing.assert_allclose(fp.diffusion_matrix_closed(1, M, M.center), expect * np.eye(3), rtol=1e-12)


@pytest.mark.parametrize("v", [(0.5, 0, 0), (1.0, -2.0, 0.3), (0.02, 0.01, 0), (4.0, 1.0, 1.0)])
def test_D1_closed_vs_monte_carlo(v):
    M = Maxwellian(3, (0.1, 0, 0), 1.3)
    Dc = fp.diffusion_matrix_closed(1, M, v)
    Dm, se = fp.diffusion_matrix_mc(1.0, M, v, 1_000_000, seed=2)
    assert np.all(np.abs(Dc - Dm) <= 4 * se + 1e-12)
    assert np.linalg.norm(Dc - Dm) / np.linalg.norm(Dc) <= 1e-3


def test_D1_from_moments_consistent():
    M = Maxwellian(3, (0.3, 0, 0), 0.8)
    for v in ([1.0, 0.5, -0.2], [0.3, 0, 0], [-2.0, 1.0, 3.0]):
        np.testing.assert_allclose(fp.d1_from_moments(M, v), fp.diffusion_matrix_closed(1, M, v), rtol=1e-12)


def test_D1_closed_is_vectorized():
    M = Maxwellian(3)
    V = make_rng(0).standard_normal((7, 3))
    D = fp.diffusion_matrix_closed(1, M, V)
    for k in range(7):
        np.testing.assert_allclose(D[k], fp.diffusion_matrix_closed(1, M, V[k]), rtol=1e-14)


def test_D1_rejects_d2_and_other_gamma():
    with pytest.raises(ValueError):
        fp.diffusion_matrix_closed(1, Maxwellian(2), np.zeros(2))
    with pytest.raises(ValueError):
        fp.diffusion_matrix_closed(2, M3, np.zeros(3))


# -- J_gamma -----------------------------------------------------------------------------


def test_j_gamma_vanishes_at_M():
    for gamma in (0, 1):
        assert abs(fp.j_gamma(M3, M3, fp.DiffusionMatrix.closed(gamma, M3)).value) <= 1e-10


@pytest.mark.parametrize("shift", [0.5, 1.0])
def test_J0_of_shifted_gaussian_equals_entropy(shift):
    # grad log g = m/theta, and E_f[m.S(v,0)m] = 2 theta |m|^2, so J0 = |m|^2/(2 theta) = H
    f = GaussianMixture.gaussian((shift, 0, 0), 1.0)
    J0 = fp.j_gamma(f, M3, fp.DiffusionMatrix.closed(0, M3)).value
    assert J0 == pytest.approx(shift ** 2 / 2, rel=1e-3)


def test_J1_of_shifted_gaussian_monte_carlo():
    m = np.array([0.8, 0, 0])
    f = GaussianMixture.gaussian(m, 1.0)
    v = f.sample(400_000, make_rng(5))
    D = fp.diffusion_matrix_closed(1, M3, v)
    vals = np.einsum("i,nij,j->n", m, D, m)
    J1 = fp.j_gamma(f, M3, fp.DiffusionMatrix.closed(1, M3)).value
    assert J1 == pytest.approx(vals.mean(), abs=4 * vals.std() / math.sqrt(len(vals)) + 1e-3 * vals.mean())


def test_J_inequalities_on_suite():
    alpha = 7 / 24 * math.sqrt(2 / math.pi)
    D0, D1 = fp.DiffusionMatrix.closed(0, M3), fp.DiffusionMatrix.closed(1, M3)
    for label, f in default_suite(M3):
        H = relative_entropy(f, M3).value
        assert fp.j_gamma(f, M3, D0).value >= 0.5 * H * 0.98, label
        assert fp.j_gamma(f, M3, D1).value >= 2 * alpha * H * 0.98, label


def test_j_gamma_grid_density():
    spec = GridSpec.default(M3, 32)
    f = GaussianMixture.gaussian((0.5, 0, 0), 1.0)
    a = fp.j_gamma(f.on_grid(spec), M3, fp.DiffusionMatrix.closed(0, M3)).value
    assert a == pytest.approx(0.125, rel=0.02)


# -- radial Fokker-Planck --------------------------------------------------------------


def test_fp_keeps_M_stationary():
    tr = fp.fp_radial_evolve(("gaussian", 1.0), 1.0, 2.0)
    assert np.max(np.abs(tr.entropy)) <= 1e-12
    np.testing.assert_allclose(tr.meta["final_profile"], tr.meta["maxwellian_profile"], rtol=1e-10)


@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
def test_fp_entropy_rate_and_mass(theta):
    tr = fp.fp_radial_evolve(("gaussian", 2 * theta), theta, 10.0)
    assert tr.meta["max_mass_error"] <= 1e-8
    assert np.all(np.diff(tr.entropy) <= 1e-14)
    assert fit_log_linear(tr.times, tr.entropy).rate >= 0.5 - 0.025
    # second moment of the radial FP solution relaxes exactly like e^{-t/2}
    assert fit_log_linear(tr.times, tr.temperature, (0.0, 6.0)).rate == pytest.approx(0.5, rel=0.01)


def test_fp_initial_entropy_matches_gaussian():
    tr = fp.fp_radial_evolve(("gaussian", 2.0), 1.0, 0.1)
    H = relative_entropy(GaussianMixture.gaussian((0, 0, 0), 2.0), M3).value
    # the radial domain stops at 6 sqrt(theta)
    assert tr.entropy[0] == pytest.approx(H, rel=1e-2)


def test_fp_accepts_callable_and_array():
    grid = fp.RadialGrid(1.0, 240, 6.0)
    a = fp.fp_radial_evolve(lambda r: np.exp(-r ** 2 / 3), 1.0, 0.5)
    b = fp.fp_radial_evolve(np.exp(-grid.centers ** 2 / 3), 1.0, 0.5)
    np.testing.assert_allclose(a.entropy, b.entropy)


def test_fp_explicit_scheme_aborts_at_default_step():
    with pytest.raises(FloatingPointError, match="positivity"):
        fp.fp_radial_evolve(("gaussian", 2.0), 1.0, 1.0, scheme="explicit")


def test_fp_explicit_with_small_step_agrees():
    a = fp.fp_radial_evolve(("gaussian", 2.0), 1.0, 1.0, dt=2e-4, n_r=120, scheme="explicit", observe=10)
    b = fp.fp_radial_evolve(("gaussian", 2.0), 1.0, 1.0, dt=2e-4, n_r=120, observe=10)
    np.testing.assert_allclose(a.entropy, b.entropy, rtol=1e-3)


def test_fp_rejects_bad_input():
    with pytest.raises(ValueError):
        fp.fp_radial_evolve(("gaussian", 2.0), 1.0, 1.0, scheme="rk4")
    with pytest.raises(ValueError):
        fp.fp_radial_evolve(-np.ones(240), 1.0, 1.0)
