"""Relative entropy, Phi-entropies, Fisher information, dissipation functionals and the CKP bound."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special

from .core import (
    CollisionKernel,
    GaussianMixture,
    GridDensity,
    GridSpec,
    Maxwellian,
    ParticleEnsemble,
    make_rng,
    sample_sphere,
    sphere_area,
)

RATIO_MIN = 1e-30
RATIO_MAX = 1e30
DEFAULT_N_MC = 10_000_000
DEFAULT_BATCHES = 100
THREADS_ENV = "LINBOLTZ_THREADS"


def n_threads() -> int:
    return max(1, int(os.environ.get(THREADS_ENV, "1")))


@dataclass(frozen=True)
class FunctionalReport:
    name: str
    value: float
    std_error: float
    method: str
    samples_or_cells: int
    clamped: int = 0
    notes: tuple = ()
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError("std_error must be nonnegative")
        if self.method not in ("grid", "monte_carlo", "carleman_grid", "histogram", "closed_form"):
            raise ValueError(f"unknown method {self.method!r}")

    def csv_row(self, kernel_id: str = "", density_id: str = "", seed="") -> list:
        return [self.name, kernel_id, density_id, repr(float(self.value)), repr(float(self.std_error)),
                self.method, str(seed)]


CSV_HEADER = ["functional", "kernel", "density", "value", "std_error", "method", "seed"]


# ---------------------------------------------------------------------------
# Phi functions


@dataclass(frozen=True)
class PhiFunction:
    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        x = np.geomspace(1e-6, 1e6, 241)
        y = np.geomspace(1e-6, 1e6, 241)[::-1]
        mid = self.phi(0.5 * (x + y))
        chord = 0.5 * (self.phi(x) + self.phi(y))
        if np.any(mid > chord * (1 + 1e-12) + 1e-12):
            raise ValueError(f"Phi function {self.name} fails the midpoint convexity check")

    def psi(self, x, y) -> np.ndarray:
        """Dissipation integrand ``(x - y)(Phi'(x) - Phi'(y))``, nonnegative by convexity."""
        return (x - y) * (self.dphi(x) - self.dphi(y))


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


ENTROPY = PhiFunction("entropy", lambda x: _xlogx(x) - x + 1.0, lambda x: np.log(x))
CHI_SQUARE = PhiFunction("chi_square", lambda x: (x - 1.0) ** 2, lambda x: 2.0 * (x - 1.0))


def _psi_entropy(x, y):
    return (x - y) * (np.log(x) - np.log(y))


# ---------------------------------------------------------------------------
# Density adapters


def evaluation_grid(M: Maxwellian, f=None, L: float = 6.0, cells_per_sd: float = 2.0,
                    max_n: Optional[int] = None) -> GridSpec:
    """Grid centred at u0 wide enough for M and an analytic density f.

    Midpoint sums of Gaussians converge spectrally, so two cells per standard deviation
    already give near machine precision.
    """
    half = L * math.sqrt(M.theta)
    sd_min = math.sqrt(M.theta)
    if isinstance(f, GaussianMixture):
        for m, s in zip(f.means, f.variances):
            off = np.max(np.abs(np.asarray(m) - M.center))
            half = max(half, off + (L + 1) * math.sqrt(s))
            sd_min = min(sd_min, math.sqrt(s))
    elif isinstance(f, Maxwellian):
        off = np.max(np.abs(f.center - M.center))
        half = max(half, off + (L + 1) * math.sqrt(f.theta))
        sd_min = min(sd_min, math.sqrt(f.theta))
    n = int(math.ceil(2 * half * cells_per_sd / sd_min))
    if max_n is None:
        max_n = {2: 400, 3: 96}.get(M.dim, 24)
    return GridSpec(M.dim, M.u0, half, max(8, min(n, max_n)))


def _grid_values(f, M: Maxwellian, spec: Optional[GridSpec]):
    """Cell-center values of f (unnormalized for analytic f) and the grid they live on."""
    if isinstance(f, GridDensity):
        return f.flat, f.spec
    if isinstance(f, (GaussianMixture, Maxwellian)):
        spec = spec or evaluation_grid(M, f)
        return f.pdf(spec.points()), spec
    raise TypeError(f"unsupported density type {type(f).__name__}")


def _clamped_ratio(fv: np.ndarray, Mv: np.ndarray):
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        g = fv / Mv
    bad = (fv > 0) & ~((g >= RATIO_MIN) & (g <= RATIO_MAX))
    g = np.where(fv > 0, np.clip(np.nan_to_num(g, nan=RATIO_MAX, posinf=RATIO_MAX), RATIO_MIN, RATIO_MAX), 0.0)
    return g, int(bad.sum())


# ---------------------------------------------------------------------------
# Entropies


def histogram_density(ens: ParticleEnsemble, spec: GridSpec) -> tuple[np.ndarray, int, int]:
    counts, outside = ens.histogram(spec)
    return counts / (ens.n * spec.cell_volume), int((counts > 0).sum()), outside


def relative_entropy(f, M: Maxwellian, spec: Optional[GridSpec] = None) -> FunctionalReport:
    """``H(f|M) = int f log(f/M)``.

    Grid densities are summed cellwise with ``0 log 0 = 0``; analytic densities are
    evaluated at cell centers of :func:`evaluation_grid`; particle ensembles use a
    histogram on the default grid with a Miller-Madow bias correction.
    """
    if isinstance(f, ParticleEnsemble):
        return _relative_entropy_histogram(f, M, spec)
    fv, spec = _grid_values(f, M, spec)
    Mv = M.pdf(spec.points())
    g, clamped = _clamped_ratio(fv, Mv)
    val = float(np.sum(_xlogx(g) * Mv) * spec.cell_volume)
    notes = ("ratio clamped",) if clamped else ()
    return FunctionalReport("relative_entropy", val, 0.0, "grid", spec.size, clamped, notes)


def _relative_entropy_histogram(ens: ParticleEnsemble, M: Maxwellian, spec: Optional[GridSpec]) -> FunctionalReport:
    spec = spec or GridSpec.default(M)
    counts, outside = ens.histogram(spec)
    N = ens.n
    occ = counts > 0
    p = counts[occ] / N
    logq = np.log(M.pdf(spec.points()[occ]) * spec.cell_volume)
    terms = np.log(p) - logq
    plug_in = float(np.sum(p * terms))
    k_occ = int(occ.sum())
    val = plug_in - (k_occ - 1) / (2.0 * N)
    var = float(np.sum(p * terms ** 2) - plug_in ** 2)
    se = math.sqrt(max(var, 0.0) / N)
    notes = ("miller-madow",) + ((f"{outside} particles outside grid",) if outside else ())
    return FunctionalReport("relative_entropy", val, se, "histogram", N, 0, notes,
                            {"plug_in": plug_in, "occupied_cells": k_occ})


def phi_entropy(f, M: Maxwellian, phi: PhiFunction, spec: Optional[GridSpec] = None) -> FunctionalReport:
    """``H_Phi(f|M) = int M Phi(f/M)``."""
    if isinstance(f, ParticleEnsemble):
        spec = spec or GridSpec.default(M)
        fv, _, _ = histogram_density(f, spec)
        method, size = "histogram", f.n
    else:
        fv, spec = _grid_values(f, M, spec)
        method, size = "grid", spec.size
    Mv = M.pdf(spec.points())
    g, clamped = _clamped_ratio(fv, Mv)
    val = float(np.sum(Mv * phi.phi(g)) * spec.cell_volume)
    return FunctionalReport(f"phi_entropy[{phi.name}]", val, 0.0, method, size, clamped)


def gaussian_relative_entropy(m, tau: float, M: Maxwellian) -> float:
    d = M.dim
    r = tau / M.theta
    dm = np.asarray(m, dtype=float) - M.center
    return 0.5 * d * (r - 1 - math.log(r)) + float(dm @ dm) / (2 * M.theta)


def gaussian_chi_square(m, tau: float, M: Maxwellian) -> float:
    """``int (f - M)^2 / M`` for f = N(m, tau I); finite only when tau < 2 theta."""
    d, th = M.dim, M.theta
    if tau >= 2 * th:
        return math.inf
    dm = np.asarray(m, dtype=float) - M.center
    c = 1.0 / tau - 1.0 / (2 * th)  # f^2/M ~ exp(-c |v - m'|^2)
    pref = (th / (tau * tau)) ** (d / 2) * (1.0 / (2 * c)) ** (d / 2)
    return pref * math.exp(float(dm @ dm) / (2 * th - tau)) - 1.0


def gaussian_fisher(m, tau: float, M: Maxwellian) -> float:
    d, th = M.dim, M.theta
    dm = np.asarray(m, dtype=float) - M.center
    return d * tau * (1.0 / th - 1.0 / tau) ** 2 + float(dm @ dm) / th ** 2


# ---------------------------------------------------------------------------
# Fisher information


def fisher_information(f, M: Maxwellian, spec: Optional[GridSpec] = None) -> FunctionalReport:
    """``I(f|M) = int f |grad log(f/M)|^2`` with second-order central differences.

    Boundary cells use second-order one-sided differences (flagged in the report).
    """
    fv, spec = _grid_values(f, M, spec)
    Mv = M.pdf(spec.points())
    g, clamped = _clamped_ratio(fv, Mv)
    if np.any(g <= 0):
        raise ValueError("Fisher information needs f > 0 on the grid")
    logg = np.log(g).reshape(spec.shape)
    grads = np.gradient(logg, spec.h, edge_order=2)
    if spec.dim == 1:
        grads = [grads]
    sq = sum(gk ** 2 for gk in grads).ravel()
    fw = fv / (np.sum(fv) * spec.cell_volume) if isinstance(f, GridDensity) else fv
    val = float(np.sum(fw * sq) * spec.cell_volume)
    return FunctionalReport("fisher_information", val, 0.0, "grid", spec.size, clamped, ("one-sided boundary",))


@dataclass(frozen=True)
class FisherIdentityReport:
    relative_lhs: float
    relative_rhs: float
    absolute_lhs: float
    absolute_rhs: float

    @property
    def max_abs_error(self) -> float:
        return max(abs(self.relative_lhs - self.relative_rhs), abs(self.absolute_lhs - self.absolute_rhs))


def ou_gaussian(m, tau: float, M: Maxwellian, t: float):
    """Mean and variance of ``S_t f`` for f = N(m, tau I) under the Fokker-Planck flow towards M."""
    k = math.exp(-t / M.theta)
    return M.center + k * (np.asarray(m, dtype=float) - M.center), M.theta + k * k * (tau - M.theta)


def fisher_integral_identity_check(m, tau: float, M: Maxwellian) -> FisherIdentityReport:
    """``H(f) - H(M) = int_0^inf (I(S_t f) - I(M)) dt`` for Gaussian f, and its relative form
    ``H(f|M) = int_0^inf I(S_t f|M) dt``, with closed-form integrands and adaptive quadrature in t."""
    if not tau > 0:
        raise ValueError("variance tau must be positive")
    d, th = M.dim, M.theta

    def rel(t):
        mt, tt = ou_gaussian(m, tau, M, t)
        return gaussian_fisher(mt, tt, M)

    def absol(t):
        _, tt = ou_gaussian(m, tau, M, t)
        return d / tt - d / th

    opts = dict(epsabs=1e-14, epsrel=1e-12, limit=400)
    rhs_rel = integrate.quad(rel, 0, np.inf, **opts)[0]
    rhs_abs = integrate.quad(absol, 0, np.inf, **opts)[0]
    lhs_rel = gaussian_relative_entropy(m, tau, M)
    lhs_abs = 0.5 * d * math.log(th / tau)  # H(N(m,tau)) - H(N(u0,theta)) with H = int f log f
    return FisherIdentityReport(lhs_rel, rhs_rel, lhs_abs, rhs_abs)


# ---------------------------------------------------------------------------
# Dissipation: Monte Carlo


class _GridRatio:
    """Density ``M g_c / Z`` with g piecewise constant on the cells of a grid density."""

    def __init__(self, f: GridDensity, M: Maxwellian):
        spec = f.spec
        self.spec = spec
        self.M = M
        Mc = M.pdf(spec.points())
        g, self.clamped = _clamped_ratio(f.flat, Mc)
        lo = np.asarray(spec.center) - spec.half_width
        self.edges = [(lo[k] + spec.h * np.arange(spec.n + 1) - M.center[k]) / math.sqrt(M.theta)
                      for k in range(spec.dim)]
        cdf = [special.ndtr(e) for e in self.edges]
        self.cdf = cdf
        cellmass = np.ones(spec.shape)
        for k in range(spec.dim):
            shape = [1] * spec.dim
            shape[k] = spec.n
            cellmass = cellmass * np.diff(cdf[k]).reshape(shape)
        w = g * cellmass.ravel()
        self.Z = float(w.sum())
        self.g = g / self.Z
        self.p = w / w.sum()

    def ratio(self, v):
        flat, inside = self.spec.cell_index(v)
        return np.where(inside, self.g[flat], 0.0)

    def sample(self, n, rng):
        cells = rng.choice(self.p.size, size=n, p=self.p)
        idx = np.unravel_index(cells, self.spec.shape)
        out = np.empty((n, self.spec.dim))
        for k in range(self.spec.dim):
            a = self.cdf[k][idx[k]]
            b = self.cdf[k][idx[k] + 1]
            u = a + (b - a) * rng.random(n)
            out[:, k] = self.M.center[k] + math.sqrt(self.M.theta) * special.ndtri(u)
        return out


class _AnalyticRatio:
    def __init__(self, f, M: Maxwellian):
        self.f = f
        self.M = M
        self.clamped = 0

    def ratio(self, v):
        return np.exp(self.f.logpdf(v) - self.M.logpdf(v))

    def sample(self, n, rng):
        return self.f.sample(n, rng)


def _ratio_model(f, M):
    if isinstance(f, GridDensity):
        return _GridRatio(f, M)
    if isinstance(f, (GaussianMixture, Maxwellian)):
        return _AnalyticRatio(f, M)
    raise TypeError(f"dissipation needs a density with a pdf, got {type(f).__name__}")


def _dissipation_batch(model, M, kernels, psi, n, rng, sampling):
    d = M.dim
    v = model.sample(n, rng) if sampling == "importance" else M.sample(n, rng)
    vs = M.sample(n, rng)
    nv = sample_sphere(rng, n, d)
    q = v - vs
    qn = np.linalg.norm(q, axis=1)
    qdot = np.sum(q * nv, axis=1)
    xi = np.abs(qdot) / np.where(qn > 0, qn, 1.0)
    vp = v - qdot[:, None] * nv
    x = model.ratio(v)
    y = model.ratio(vp)
    clamped = int(np.sum((x > 0) & ((x < RATIO_MIN) | (x > RATIO_MAX))) + np.sum((y < RATIO_MIN) | (y > RATIO_MAX)))
    x = np.clip(x, RATIO_MIN, RATIO_MAX)
    y = np.clip(y, RATIO_MIN, RATIO_MAX)
    P = psi(x, y)
    if sampling == "importance":
        P = P / (x + y)
        w = sphere_area(d)
    else:
        w = 0.5 * sphere_area(d)
    if not np.all(np.isfinite(P)):
        raise FloatingPointError("non-finite dissipation integrand; check the density and kernel")
    out = np.array([w * float(np.mean(k(qn, xi) * P)) for k in kernels])
    return out, clamped


def dissipation_batches(f, M: Maxwellian, kernels: Sequence[CollisionKernel], n_mc: int = DEFAULT_N_MC,
                        seed: int = 0, phi: PhiFunction = ENTROPY, batches: int = DEFAULT_BATCHES,
                        sampling: str = "importance") -> tuple[np.ndarray, int]:
    """Per-batch dissipation estimates for several kernels on common random numbers.

    Returns an array of shape (len(kernels), batches) and the number of clamping events.
    Batch b draws from the generator keyed by ``seed ^ b``.
    """
    if sampling not in ("importance", "equilibrium"):
        raise ValueError("sampling must be 'importance' or 'equilibrium'")
    for k in kernels:
        if k.dim != M.dim:
            raise ValueError("kernel and Maxwellian dimensions differ")
    if n_mc < batches or batches < 2:
        raise ValueError("need at least 2 batches and one sample per batch")
    model = _ratio_model(f, M)
    psi = _psi_entropy if phi is ENTROPY else phi.psi
    nb = n_mc // batches

    def run(b):
        return _dissipation_batch(model, M, kernels, psi, nb, make_rng(seed, b), sampling)

    threads = n_threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(run, range(batches)))
    else:
        results = [run(b) for b in range(batches)]
    vals = np.stack([r[0] for r in results], axis=1)
    return vals, sum(r[1] for r in results) + model.clamped


def _report_from_batches(name, vals, clamped, n_mc, extra=None) -> FunctionalReport:
    b = vals.size
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(b))
    notes = ("ratio clamped",) if clamped else ()
    return FunctionalReport(name, mean, se, "monte_carlo", int(n_mc), clamped, notes, extra or {})


def phi_dissipation_mc(f, M: Maxwellian, kernel: CollisionKernel, phi: PhiFunction = ENTROPY,
                       n_mc: int = DEFAULT_N_MC, seed: int = 0, batches: int = DEFAULT_BATCHES,
                       sampling: str = "importance") -> FunctionalReport:
    """Monte-Carlo ``D_Phi(f) = 1/2 int B M M Psi(f/M(v), f/M(v')) dn dv_* dv``.

    ``sampling="importance"`` draws v from f and uses the collision symmetry to write the
    integral as ``|S^{d-1}| E[B Psi(x, y) / (x + y)]``, which keeps the variance finite
    for wide densities. ``sampling="equilibrium"`` draws v from M directly.
    """
    vals, clamped = dissipation_batches(f, M, [kernel], n_mc, seed, phi, batches, sampling)
    return _report_from_batches(f"dissipation[{phi.name}]", vals[0], clamped, n_mc, {"sampling": sampling})


def entropy_dissipation_mc(f, M: Maxwellian, kernel: CollisionKernel, n_mc: int = DEFAULT_N_MC,
                           seed: int = 0, batches: int = DEFAULT_BATCHES,
                           sampling: str = "importance") -> FunctionalReport:
    return phi_dissipation_mc(f, M, kernel, ENTROPY, n_mc, seed, batches, sampling)


@dataclass(frozen=True)
class PairedDissipation:
    reports: tuple
    ratio: float
    ratio_std_error: float


def paired_dissipation_mc(f, M: Maxwellian, kernel_a: CollisionKernel, kernel_b: CollisionKernel,
                          n_mc: int = DEFAULT_N_MC, seed: int = 0, phi: PhiFunction = ENTROPY,
                          batches: int = DEFAULT_BATCHES) -> PairedDissipation:
    """Both dissipations on common random numbers and the ratio D_a / D_b with a delta-method error."""
    vals, clamped = dissipation_batches(f, M, [kernel_a, kernel_b], n_mc, seed, phi, batches)
    ra = _report_from_batches(f"dissipation[{phi.name}]", vals[0], clamped, n_mc)
    rb = _report_from_batches(f"dissipation[{phi.name}]", vals[1], clamped, n_mc)
    if rb.value <= 0:
        return PairedDissipation((ra, rb), math.nan, math.nan)
    ratio = ra.value / rb.value
    resid = vals[0] - ratio * vals[1]
    se = float(resid.std(ddof=1) / math.sqrt(vals.shape[1]) / rb.value)
    return PairedDissipation((ra, rb), ratio, se)


# ---------------------------------------------------------------------------
# Dissipation: Carleman grid


def phi_dissipation_grid(f: GridDensity, M: Maxwellian, kernel: CollisionKernel, phi: PhiFunction = ENTROPY,
                         tensor=None) -> FunctionalReport:
    """``D_Phi(f) = 1/2 int int M(v) k_B(v, v') Psi(f/M(v), f/M(v')) dv dv'`` as a double grid sum."""
    if tensor is None:
        raise ValueError("no kernel tensor supplied; run carleman.precompute_kernel(kernel, M, grid) first")
    if tensor.kernel_id != kernel.kernel_id:
        raise ValueError("kernel tensor was built for a different kernel")
    if f.spec != tensor.spec:
        raise ValueError("density and kernel tensor live on different grids")
    Mv = M.pdf(f.spec.points())
    g, clamped = _clamped_ratio(f.flat, Mv)
    g = np.clip(g, RATIO_MIN, RATIO_MAX)
    psi = _psi_entropy if phi is ENTROPY else phi.psi
    val = tensor.dissipation_sum(g, psi)
    return FunctionalReport(f"dissipation[{phi.name}]", val, 0.0, "carleman_grid", f.spec.size, clamped)


# ---------------------------------------------------------------------------
# Csiszar-Kullback-Pinsker


@dataclass(frozen=True)
class CKPReport:
    l1: float
    entropy: float
    bound: float
    linear_variant_bound: float

    @property
    def holds(self) -> bool:
        return self.l1 <= self.bound + 1e-12

    @property
    def slack(self) -> float:
        return self.bound - self.l1


def ckp_check(f, M: Maxwellian, spec: Optional[GridSpec] = None) -> CKPReport:
    """``||f - M||_1 <= sqrt(2 H(f|M))``; also reports ``sqrt(2) H(f|M)`` for comparison."""
    fv, spec = _grid_values(f, M, spec)
    Mv = M.pdf(spec.points())
    l1 = float(np.sum(np.abs(fv - Mv)) * spec.cell_volume)
    H = relative_entropy(f, M, spec).value
    H = max(H, 0.0)
    return CKPReport(l1, H, math.sqrt(2 * H), math.sqrt(2) * H)


@dataclass(frozen=True)
class ComparisonCheck:
    label: str
    ratio: float
    ratio_std_error: float
    constant: float
    holds: bool


def dissipation_comparison_check(suite, M: Maxwellian, B: CollisionKernel, B_tilde: CollisionKernel,
                                 constant: float, n_mc: int = 2_000_000, seed: int = 0,
                                 phi: PhiFunction = ENTROPY, n_sigma: float = 3.0) -> list:
    """``D^B(f) >= C D^{B~}(f)`` for each ``(label, f)`` in ``suite`` with ``n_sigma`` slack on the ratio."""
    out = []
    for label, f in suite:
        pd = paired_dissipation_mc(f, M, B, B_tilde, n_mc, seed, phi)
        if not math.isfinite(pd.ratio):
            out.append(ComparisonCheck(label, math.nan, math.nan, constant, True))
            continue
        ok = pd.ratio >= constant - n_sigma * pd.ratio_std_error
        out.append(ComparisonCheck(label, pd.ratio, pd.ratio_std_error, constant, bool(ok)))
    return out
