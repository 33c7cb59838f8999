import math

import numpy as np
import pytest
from scipy.special import erf

from linboltz import carleman as cm
from linboltz.core import AngularPart, CollisionKernel, GaussianMixture, GridSpec, Maxwellian


def mean_abs_gaussian_3d(v, theta):
    """E|v - V| for V ~ N(0, theta I) in d = 3 (noncentral chi mean)."""
    m = np.linalg.norm(v, axis=-1) / math.sqrt(theta)
    safe = np.maximum(m, 1e-300)
    val = math.sqrt(2 / math.pi) * np.exp(-m * m / 2) + (m + 1 / safe) * erf(m / math.sqrt(2))
    return math.sqrt(theta) * np.where(m > 0, val, 2 * math.sqrt(2 / math.pi))


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("v", [(0.0, 0.0, 0.0), (1.0, -0.5, 0.2), (3.0, 1.0, -2.0)])
def test_maxwell_sigma_is_one_from_carleman(dim, v):
    M = Maxwellian(dim)
    K = CollisionKernel.maxwell_molecules(dim)
    assert cm.carleman_row_integral(K, M, np.array(v[:dim])) == pytest.approx(1.0, abs=1e-6)


def test_maxwell_sigma_is_one_for_non_power_angular():
    M = Maxwellian(3, (0.5, 0, 0), 1.7)
    K = CollisionKernel.maxwellian(AngularPart.power_law(2.5), dim=3)
    assert cm.carleman_row_integral(K, M, np.array([1.0, 2.0, 0.0])) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
def test_hard_sphere_sigma_closed_form(theta):
    M = Maxwellian(3, None, theta)
    K = CollisionKernel.hard_potential(1.0, 3)
    v = np.array([[0, 0, 0], [1.0, 0, 0], [0.5, 2, -1], [4, 0, 0]])
    np.testing.assert_allclose(cm.collision_frequency(K, M, v), mean_abs_gaussian_3d(v, theta), rtol=1e-9)
    np.testing.assert_allclose(cm.carleman_row_integral(K, M, v[2]), mean_abs_gaussian_3d(v[2], theta), rtol=1e-6)


def test_hard_sphere_sigma_grows_linearly():
    M = Maxwellian(3)
    K = CollisionKernel.hard_potential(1.0, 3)
    r = np.linspace(0, 12, 25)
    sig = cm.collision_frequency(K, M, np.outer(r, [1.0, 0, 0]))
    assert np.min(sig / (1 + r)) > 0.5


@pytest.mark.parametrize(
    "kernel",
    [CollisionKernel.maxwell_molecules(3), CollisionKernel.hard_potential(1.0, 3), CollisionKernel.grazing(0.25, 1),
     CollisionKernel.maxwell_molecules(2)],
    ids=lambda k: k.kernel_id,
)
def test_detailed_balance(kernel):
    M = Maxwellian(kernel.dim, None, 1.3)
    assert cm.detailed_balance_residual(kernel, M, 1000, seed=2) <= 1e-8


def test_carleman_kernel_rejects_diagonal():
    M = Maxwellian(3)
    with pytest.raises(ValueError):
        cm.carleman_kernel(CollisionKernel.maxwell_molecules(3), M, np.ones(3), np.ones(3))


def test_carleman_kernel_nonnegative(rng):
    M = Maxwellian(3)
    v, w = rng.normal(size=(2, 500, 3)) * 3
    assert np.all(cm.carleman_kernel(CollisionKernel.hard_potential(1.0, 3), M, v, w) >= 0)


def test_hard_sphere_over_maxwell_pairs():
    M = Maxwellian(3)
    r = cm.kernel_ratio_pairs(CollisionKernel.hard_potential(1.0, 3), CollisionKernel.maxwell_molecules(3), M,
                              1000, seed=4)
    assert r.min() >= 0.5


def test_comparison_constant_hard_spheres():
    res = cm.comparison_constant(CollisionKernel.hard_potential(1.0, 3), CollisionKernel.maxwell_molecules(3), 1.0)
    assert res.C_tilde >= 0.5
    # infimum at s = 0, rho_bar = 0: 1 / E[1/|Z|] for a 2-D standard normal Z
    assert res.C_tilde == pytest.approx(math.sqrt(2 / math.pi), rel=1e-6)
    assert res.C_theta == pytest.approx(min(1.0, res.C_tilde))


def test_comparison_constant_identity():
    K = CollisionKernel.maxwell_molecules(3)
    assert cm.comparison_constant(K, K, 1.0).C_tilde == pytest.approx(1.0, abs=1e-12)


def test_comparison_constant_theta_scaling():
    hs, mx = CollisionKernel.hard_potential(1.0, 3), CollisionKernel.maxwell_molecules(3)
    c1 = cm.comparison_constant(hs, mx, 1.0).C_tilde
    c2 = cm.comparison_constant(hs, mx, 2.0).C_tilde
    assert c2 / c1 == pytest.approx(math.sqrt(2), rel=1e-6)


def test_grazing_comparison_uniform_in_epsilon():
    vals = [cm.comparison_constant(CollisionKernel.grazing(e, 1), CollisionKernel.grazing(e, 0), 1.0).C_tilde
            for e in (1.0, 0.5, 0.25)]
    assert min(vals) >= 0.5
    assert max(vals) - min(vals) <= 1e-6


def test_comparison_requires_same_angular():
    with pytest.raises(ValueError):
        cm.comparison_constant(CollisionKernel.grazing(0.5, 1), CollisionKernel.maxwell_molecules(3), 1.0)


# -- tabulated tensor -------------------------------------------------------


def test_tensor_row_sums_match_sigma(small_tensor, maxwell_d2):
    chk = cm.row_sum_check(small_tensor, maxwell_d2)
    assert chk["max_rel_error"] <= 0.01
    assert np.all(small_tensor.table >= 0)
    np.testing.assert_allclose(small_tensor.sigma, 1.0, atol=1e-6)


def test_tensor_detailed_balance(small_tensor):
    Mv = small_tensor.maxwellian.pdf(small_tensor.spec.points())
    W = Mv[:, None] * small_tensor.table
    assert np.max(np.abs(W - W.T)) <= 1e-8 * np.max(W)


def test_tensor_generator_conserves_mass_and_fixes_M(small_tensor, M2):
    spec = small_tensor.spec
    f = GaussianMixture.gaussian((1.0, 0.0), 1.0).on_grid(spec)
    assert np.sum(small_tensor.generator_values(f.flat)) * spec.cell_volume == pytest.approx(0.0, abs=1e-12)
    Mg = M2.on_grid(spec)
    assert np.max(np.abs(small_tensor.generator_values(Mg.flat))) <= 1e-12


def test_gain_of_M_is_M(small_tensor, M2):
    Mg = M2.on_grid(small_tensor.spec)
    g = small_tensor.gain_apply(Mg)
    assert np.sum(np.abs(g.values - Mg.values)) * small_tensor.spec.cell_volume <= 0.01
    assert g.mass() == pytest.approx(1.0, rel=0.01)


def test_energy_identity(small_tensor, M2, maxwell_d2):
    spec = small_tensor.spec
    f = GaussianMixture.gaussian((0.5, 0.0), 1.6).on_grid(spec)
    Mg = M2.on_grid(spec)
    r2 = np.sum(spec.points() ** 2, axis=1)
    lhs = np.sum(r2 * small_tensor.generator_values(f.flat)) * spec.cell_volume
    rhs = -maxwell_d2.gamma_b() * np.sum(r2 * (f.flat - Mg.flat)) * spec.cell_volume
    assert lhs == pytest.approx(rhs, rel=0.02)


def test_gain_rejects_grid_mismatch(small_tensor, M2):
    with pytest.raises(ValueError):
        small_tensor.gain_apply(M2.on_grid(GridSpec.default(M2, 16)))


def test_tensor_cache_roundtrip(small_tensor, tmp_path):
    p = small_tensor.save(tmp_path / "t.bin")
    kt = cm.KernelTensor.load(p)
    np.testing.assert_array_equal(kt.table, small_tensor.table)
    np.testing.assert_array_equal(kt.sigma, small_tensor.sigma)
    np.testing.assert_array_equal(kt.self_rate, small_tensor.self_rate)
    assert kt.spec == small_tensor.spec and kt.kernel_id == small_tensor.kernel_id


def test_tensor_cache_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"not a tensor")
    with pytest.raises(ValueError):
        cm.KernelTensor.load(p)


def test_precompute_refuses_over_budget(monkeypatch):
    M = Maxwellian(2)
    monkeypatch.setenv(cm.MEMORY_BUDGET_ENV, "1")
    with pytest.raises(MemoryError, match="MiB"):
        cm.precompute_kernel(CollisionKernel.maxwell_molecules(2), M, GridSpec.default(M, 64))


def test_precompute_refuses_large_3d():
    M = Maxwellian(3)
    with pytest.raises(ValueError):
        cm.precompute_kernel(CollisionKernel.maxwell_molecules(3), M, GridSpec.default(M, 40))
