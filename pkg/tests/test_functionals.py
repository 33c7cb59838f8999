import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linboltz import functionals as fn
from linboltz.core import (
    CollisionKernel,
    GaussianMixture,
    GridSpec,
    Maxwellian,
    ParticleEnsemble,
    make_rng,
    post_collision,
    sample_sphere,
    sphere_area,
)
from linboltz.suites import default_suite

M3 = Maxwellian(3)


@pytest.mark.parametrize(
    "dim,m,tau,theta",
    [(3, (0.5, 0, 0), 1.0, 1.0), (3, (0, 0, 0), 2.0, 1.0), (3, (1.0, -0.5, 0.2), 0.6, 1.5), (2, (0.3, 0.4), 1.7, 0.8)],
)
def test_relative_entropy_gaussian_closed_form(dim, m, tau, theta):
    M = Maxwellian(dim, None, theta)
    f = GaussianMixture.gaussian(m, tau)
    assert fn.relative_entropy(f, M).value == pytest.approx(fn.gaussian_relative_entropy(m, tau, M), rel=1e-8)


def test_relative_entropy_of_M_is_zero():
    spec = GridSpec.default(M3)
    assert abs(fn.relative_entropy(M3.on_grid(spec), M3).value) <= 1e-6
    assert abs(fn.relative_entropy(M3, M3).value) <= 1e-12


def test_relative_entropy_mixture_mc_oracle():
    f = GaussianMixture((0.5, 0.5), ((1.0, 0, 0), (-1.0, 0, 0)), (1.0, 1.0))
    x = f.sample(10 ** 7, make_rng(9))
    terms = f.logpdf(x) - M3.logpdf(x)
    mean, se = terms.mean(), terms.std() / math.sqrt(len(terms))
    assert fn.relative_entropy(f, M3).value == pytest.approx(mean, abs=3 * se)


def test_histogram_entropy_estimator():
    M = Maxwellian(2)
    ens = ParticleEnsemble(GaussianMixture.gaussian((0.5, 0.0), 1.3).sample(10 ** 6, make_rng(1)))
    rep = fn.relative_entropy(ens, M)
    assert rep.method == "histogram"
    assert rep.value == pytest.approx(fn.gaussian_relative_entropy((0.5, 0.0), 1.3, M), abs=0.005)


def test_phi_entropy_matches_relative_entropy():
    for label, f in default_suite(M3):
        a = fn.phi_entropy(f, M3, fn.ENTROPY).value
        b = fn.relative_entropy(f, M3).value
        assert a == pytest.approx(b, abs=1e-8), label


@pytest.mark.parametrize("m,tau", [((0.0, 0, 0), 1.0), ((0.5, 0, 0), 1.0), ((0.3, 0.2, 0), 0.7), ((0, 0, 0), 1.4)])
def test_chi_square_gaussian_closed_form(m, tau):
    f = GaussianMixture.gaussian(m, tau)
    spec = GridSpec(3, (0, 0, 0), 12.0, 96)
    val = fn.phi_entropy(f, M3, fn.CHI_SQUARE, spec).value
    assert val == pytest.approx(fn.gaussian_chi_square(m, tau, M3), rel=1e-6, abs=1e-10)


def test_chi_square_infinite_for_wide_gaussians():
    assert fn.gaussian_chi_square((0, 0, 0), 2.0, M3) == math.inf


def test_phi_function_rejects_concave():
    with pytest.raises(ValueError, match="convexity"):
        fn.PhiFunction("sqrt", np.sqrt, lambda x: 0.5 / np.sqrt(x))


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
def test_psi_nonnegative_and_symmetric(x, y):
    for phi in (fn.ENTROPY, fn.CHI_SQUARE):
        assert phi.psi(x, y) >= 0
        assert phi.psi(x, y) == pytest.approx(phi.psi(y, x), rel=1e-12)


@pytest.mark.parametrize("m,tau", [((0.5, 0, 0), 1.0), ((1.0, 0.5, 0), 1.0), ((0, 0, 0), 1.5), ((0.5, 0, 0), 0.7)])
def test_fisher_gaussian_closed_form(m, tau):
    f = GaussianMixture.gaussian(m, tau)
    assert fn.fisher_information(f, M3).value == pytest.approx(fn.gaussian_fisher(m, tau, M3), rel=1e-4)


def test_fisher_shift_is_m_squared_over_theta_squared():
    M = Maxwellian(3, None, 2.0)
    assert fn.gaussian_fisher((1.0, 0, 0), 2.0, M) == pytest.approx(0.25)
    assert fn.fisher_information(M.on_grid(GridSpec.default(M)), M).value <= 1e-6


def test_gaussian_log_sobolev_on_suite():
    for theta in (0.5, 1.0, 2.0):
        M = Maxwellian(3, None, theta)
        for label, f in default_suite(M):
            I = fn.fisher_information(f, M).value
            H = fn.relative_entropy(f, M).value
            assert I >= (2 / theta) * H * (1 - 1e-6), label


@pytest.mark.parametrize(
    "m,tau,expected",
    [((0, 0, 0), 1.0, 0.0), ((1.0, 0, 0), 1.0, 0.5), ((0, 0, 0), 2.0, None), ((0.4, -0.3, 1.0), 0.5, None)],
)
def test_fisher_integral_identity(m, tau, expected):
    rep = fn.fisher_integral_identity_check(m, tau, M3)
    assert rep.max_abs_error <= 1e-6
    if expected is not None:
        assert rep.relative_lhs == pytest.approx(expected, abs=1e-12)


def test_fisher_identity_other_temperature():
    rep = fn.fisher_integral_identity_check((0.5, 0, 0), 3.0, Maxwellian(3, (0.1, 0, 0), 2.0))
    assert rep.max_abs_error <= 1e-6


def test_fisher_identity_rejects_bad_tau():
    with pytest.raises(ValueError):
        fn.fisher_integral_identity_check((0, 0, 0), 0.0, M3)


# -- dissipation ------------------------------------------------------------


def test_dissipation_of_M_is_zero():
    rep = fn.entropy_dissipation_mc(M3, M3, CollisionKernel.maxwell_molecules(3), n_mc=200_000, seed=1)
    assert abs(rep.value) <= 3 * rep.std_error + 1e-15


def test_maxwell_dissipation_dominates_half_entropy():
    f = GaussianMixture.gaussian((0.5, 0, 0), 1.0)
    D = fn.entropy_dissipation_mc(f, M3, CollisionKernel.maxwell_molecules(3), n_mc=2_000_000, seed=2)
    H = fn.relative_entropy(f, M3).value
    assert H == pytest.approx(0.125, rel=1e-9)
    assert D.value >= 0.5 * H - 3 * D.std_error


@pytest.mark.parametrize("label", ["shift-1", "temp-1.5", "bimodal-asym"])
def test_importance_and_equilibrium_sampling_agree(label):
    f = dict(default_suite(M3))[label]
    K = CollisionKernel.maxwell_molecules(3)
    a = fn.entropy_dissipation_mc(f, M3, K, n_mc=1_000_000, seed=3, sampling="importance")
    b = fn.phi_dissipation_mc(f, M3, K, fn.ENTROPY, n_mc=1_000_000, seed=4, sampling="equilibrium")
    assert a.value == pytest.approx(b.value, abs=3 * math.hypot(a.std_error, b.std_error))


def test_chi_square_dissipation_matches_direct_spectral_gap_form():
    """D for Phi = (x-1)^2 equals int B M M (g - g')^2 dn dv_* dv, estimated here from scratch."""
    f = GaussianMixture.gaussian((0.5, 0, 0), 0.8)
    K = CollisionKernel.maxwell_molecules(3)
    rng = make_rng(77)
    n = 2_000_000
    v, vs = M3.sample(n, rng), M3.sample(n, rng)
    nn = sample_sphere(rng, n, 3)
    vp, _ = post_collision(v, vs, nn)
    q = v - vs
    xi = np.abs(np.sum(q * nn, axis=1)) / np.linalg.norm(q, axis=1)
    g = lambda x: np.exp(f.logpdf(x) - M3.logpdf(x))
    vals = sphere_area(3) * K(np.linalg.norm(q, axis=1), xi) * (g(v) - g(vp)) ** 2
    oracle, ose = vals.mean(), vals.std() / math.sqrt(n)
    rep = fn.phi_dissipation_mc(f, M3, K, fn.CHI_SQUARE, n_mc=2_000_000, seed=5, sampling="equilibrium")
    assert rep.value == pytest.approx(oracle, abs=3 * math.hypot(ose, rep.std_error))


def test_dissipation_monotone_in_kernel():
    f = GaussianMixture.gaussian((1.0, 0, 0), 1.2)
    K = CollisionKernel.hard_potential(1.0, 3)
    pd = fn.paired_dissipation_mc(f, M3, K.scaled(2.0), K, n_mc=500_000, seed=6)
    assert pd.ratio == pytest.approx(2.0, abs=1e-12)
    assert pd.reports[0].value >= pd.reports[1].value


def test_dissipation_reproducible_from_seed():
    f = GaussianMixture.gaussian((1.0, 0, 0), 1.2)
    K = CollisionKernel.maxwell_molecules(3)
    a = fn.entropy_dissipation_mc(f, M3, K, n_mc=100_000, seed=8)
    b = fn.entropy_dissipation_mc(f, M3, K, n_mc=100_000, seed=8)
    assert a.value == b.value and a.std_error == b.std_error


@pytest.mark.parametrize("label", ["shift-0.5", "temp-1.5", "bimodal-sym"])
def test_grid_and_mc_dissipation_agree(default_tensor, M2, maxwell_d2, label):
    f = dict(default_suite(M2))[label]
    grid = fn.phi_dissipation_grid(f.on_grid(default_tensor.spec), M2, maxwell_d2, fn.ENTROPY, default_tensor)
    mc = fn.entropy_dissipation_mc(f, M2, maxwell_d2, n_mc=2_000_000, seed=1)
    assert grid.method == "carleman_grid"
    assert grid.value == pytest.approx(mc.value, abs=3 * mc.std_error)


def test_grid_dissipation_of_M_is_zero(small_tensor, M2, maxwell_d2):
    rep = fn.phi_dissipation_grid(M2.on_grid(small_tensor.spec), M2, maxwell_d2, fn.ENTROPY, small_tensor)
    assert abs(rep.value) <= 1e-8


def test_grid_dissipation_needs_tensor(M2, maxwell_d2):
    with pytest.raises(ValueError, match="precompute_kernel"):
        fn.phi_dissipation_grid(M2.on_grid(GridSpec.default(M2, 16)), M2, maxwell_d2, fn.ENTROPY, None)


def test_dissipation_comparison_hard_spheres_vs_maxwell():
    suite = [(label, f) for label, f in default_suite(M3) if label.startswith("shift")]
    checks = fn.dissipation_comparison_check(suite, M3, CollisionKernel.hard_potential(1.0, 3),
                                             CollisionKernel.maxwell_molecules(3), 0.5, n_mc=500_000, seed=3)
    assert all(c.holds for c in checks)


# -- CKP ----------------------------------------------------------------------


def test_ckp_examples():
    assert fn.ckp_check(M3, M3).l1 <= 1e-12
    for label, f in default_suite(M3):
        assert fn.ckp_check(f, M3).holds, label
    far = GaussianMixture.gaussian((3.0, 0, 0), 1.0)
    rep = fn.ckp_check(far, M3)
    assert rep.holds and rep.slack > 0
    assert rep.linear_variant_bound == pytest.approx(math.sqrt(2) * rep.entropy)


def test_report_csv_row():
    rep = fn.relative_entropy(GaussianMixture.gaussian((0.5, 0, 0), 1.0), M3)
    row = rep.csv_row("maxwell-d3", "shift-0.5", 1)
    assert len(row) == len(fn.CSV_HEADER)
    assert row[0] == "relative_entropy" and row[-1] == "1"
