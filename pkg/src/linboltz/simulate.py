"""Jump-process and grid evolution of df/dt = L f, decay-rate fits, grazing rescaling and the
heavy-tail lower-bound probe."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .carleman import KernelTensor, collision_frequency
from .core import (
    CollisionKernel,
    GridDensity,
    GridSpec,
    Maxwellian,
    ParticleEnsemble,
    make_rng,
    sample_sphere,
    sphere_area,
)
from .functionals import relative_entropy

MIN_ACCEPTANCE = 1e-4
DEFAULT_OBS = 200


class NumericalAbort(RuntimeError):
    """Raised when a simulation detects a broken invariant (negative mass, hopeless rejection)."""


@dataclass(frozen=True)
class SimulationTrace:
    times: np.ndarray
    entropy: np.ndarray
    entropy_se: np.ndarray
    temperature: np.ndarray
    temperature_se: np.ndarray
    l1: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or np.any(np.diff(t) <= 0):
            raise ValueError("trace times must be strictly increasing")
        for name in ("times", "entropy", "entropy_se", "temperature", "temperature_se", "l1"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != t.shape:
                raise ValueError(f"trace column {name} has the wrong length")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def observable(self, name: str) -> np.ndarray:
        if name not in ("entropy", "temperature", "l1"):
            raise ValueError(f"unknown observable {name!r}")
        return getattr(self, name)

    def csv_rows(self) -> tuple[list, list]:
        seed = self.meta.get("seed", "")
        header = ["t", "H_est", "H_stderr", "temperature", "temperature_stderr", "L1", "seed"]
        rows = [[float(x) for x in row] + [seed] for row in zip(self.times, self.entropy, self.entropy_se,
                                                                  self.temperature, self.temperature_se, self.l1)]
        return header, rows

    def write_csv(self, path, header_comment: Optional[str] = None) -> None:
        header, rows = self.csv_rows()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(x) for x in row[:-1]] + [row[-1]])


def _schedule(t_end: float, observe) -> np.ndarray:
    if observe is None:
        observe = DEFAULT_OBS
    if np.isscalar(observe):
        return np.linspace(0.0, t_end, int(observe) + 1)
    times = np.asarray(observe, dtype=float)
    if times[0] != 0.0:
        times = np.concatenate([[0.0], times])
    return times


# ---------------------------------------------------------------------------
# Particle observables


def particle_entropy_grid(M: Maxwellian) -> GridSpec:
    """Coarse histogram grid for particle entropies (about ten particles per occupied cell at N=1e5)."""
    return GridSpec.default(M, n={2: 32, 3: 16}.get(M.dim, 8))


def _observe_particles(v: np.ndarray, M: Maxwellian, spec: GridSpec):
    d = M.dim
    r2 = np.sum((v - M.center) ** 2, axis=1)
    N = len(v)
    temp = float(r2.mean() - d * M.theta)
    temp_se = float(r2.std(ddof=1) / math.sqrt(N))
    ens = ParticleEnsemble(v)
    H = relative_entropy(ens, M, spec)
    counts, outside = ens.histogram(spec)
    Mc = M.pdf(spec.points()) * spec.cell_volume
    l1 = float(np.sum(np.abs(counts / N - Mc)) + outside / N + max(0.0, 1.0 - Mc.sum()))
    return H.value, H.std_error, temp, temp_se, l1


# ---------------------------------------------------------------------------
# Jump process


def _gamma_moment(theta: float, dim: int, gamma: float) -> float:
    """``E |w|^gamma`` for w ~ N(0, theta I_dim)."""
    return (2 * theta) ** (gamma / 2) * math.gamma((dim + gamma) / 2) / math.gamma(dim / 2)


def _collide(v, vs, n):
    q = v - vs
    t = np.sum(q * n, axis=1)
    return v - t[:, None] * n


class _JumpSampler:
    """Jump attempts for particles, with rejection (Maxwell kernels) or thinning (hard potentials)."""

    def __init__(self, kernel: CollisionKernel, M: Maxwellian, rng: np.random.Generator):
        self.k = kernel
        self.M = M
        self.rng = rng
        self.d = M.dim
        self.area = sphere_area(self.d)
        self.bsup = kernel.angular.sup
        self.attempts = 0
        self.accepts = 0
        if kernel.gamma == 0.0:
            self.rate_const = kernel.angular_mass * kernel.beta_scale
            acc = kernel.angular_mass / (self.area * self.bsup)
            if acc < MIN_ACCEPTANCE:
                raise NumericalAbort(
                    f"angular rejection acceptance {acc:.2e} below {MIN_ACCEPTANCE:g}: "
                    f"b sup {self.bsup:.3g} vs mass {kernel.angular_mass:.3g}"
                )
        else:
            g = kernel.gamma
            self.kappa = max(1.0, 2.0 ** (g - 1))
            self.m_gamma = _gamma_moment(M.theta, self.d, g)

    def rates(self, v: np.ndarray) -> np.ndarray:
        """Attempt rate of each particle (exact sigma for Maxwell kernels, an envelope otherwise)."""
        if self.k.gamma == 0.0:
            return np.full(len(v), self.rate_const)
        a = np.linalg.norm(v - self.M.center, axis=1)
        return self.area * self.bsup * self.k.beta_scale * self.kappa * (a ** self.k.gamma + self.m_gamma)

    def _tilted(self, n: int) -> np.ndarray:
        g = self.k.gamma
        r = np.sqrt(2 * self.M.theta * self.rng.gamma((self.d + g) / 2, size=n))
        return self.M.center + r[:, None] * sample_sphere(self.rng, n, self.d)

    def attempt(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One attempt per row of v; returns the new velocities and the acceptance mask."""
        m = len(v)
        rng = self.rng
        nvec = sample_sphere(rng, m, self.d)
        if self.k.gamma == 0.0:
            # the clock rate is sigma itself, so every ring is a jump: redraw until accepted
            vs = np.empty_like(v)
            pending = np.arange(m)
            while pending.size:
                k = pending.size
                vs_k = self.M.sample(k, rng)
                n_k = sample_sphere(rng, k, self.d)
                q = v[pending] - vs_k
                qn = np.linalg.norm(q, axis=1)
                xi = np.abs(np.sum(q * n_k, axis=1)) / np.where(qn > 0, qn, 1.0)
                ok = rng.random(k) * self.bsup < self.k.angular(xi)
                vs[pending[ok]] = vs_k[ok]
                nvec[pending[ok]] = n_k[ok]
                self.attempts += k
                self.accepts += int(ok.sum())
                pending = pending[~ok]
            out = _collide(v, vs, nvec)
            return out, np.ones(m, dtype=bool)
        else:
            g = self.k.gamma
            a = np.linalg.norm(v - self.M.center, axis=1)
            ag = a ** g
            use_m = rng.random(m) * (ag + self.m_gamma) < ag
            vs = np.where(use_m[:, None], self.M.sample(m, rng), self._tilted(m))
            q = v - vs
            qn = np.linalg.norm(q, axis=1)
            xi = np.abs(np.sum(q * nvec, axis=1)) / np.where(qn > 0, qn, 1.0)
            astar = np.linalg.norm(vs - self.M.center, axis=1)
            env = self.k.beta_scale * self.kappa * (ag + astar ** g) * self.bsup
            acc = rng.random(m) * env < self.k(qn, xi)
        self.attempts += m
        self.accepts += int(acc.sum())
        out = v.copy()
        out[acc] = _collide(v[acc], vs[acc], nvec[acc])
        return out, acc


def jump_simulate(f0: ParticleEnsemble, M: Maxwellian, kernel: CollisionKernel, t_end: float,
                  observe=None, seed: int = 0, entropy_grid: Optional[GridSpec] = None) -> SimulationTrace:
    """Exact stochastic simulation of the linear Boltzmann jump process.

    Each particle carries an exponential clock. For Maxwell kernels the clock rate is sigma
    and (v_*, n) is drawn by rejection against b(xi)/sup b; for hard potentials the clock
    runs at an envelope rate and attempts are thinned.
    """
    if f0.dim != M.dim or kernel.dim != M.dim:
        raise ValueError("ensemble, kernel and Maxwellian dimensions differ")
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    rng = make_rng(seed)
    sampler = _JumpSampler(kernel, M, rng)
    times = _schedule(t_end, observe)
    spec = entropy_grid or particle_entropy_grid(M)
    v = np.array(f0.velocities, dtype=float)
    N = len(v)
    nxt = rng.exponential(1.0, N) / sampler.rates(v)
    cols = [[] for _ in range(5)]
    for tk in times:
        while True:
            idx = np.flatnonzero(nxt <= tk)
            if idx.size == 0:
                break
            newv, _ = sampler.attempt(v[idx])
            v[idx] = newv
            nxt[idx] += rng.exponential(1.0, idx.size) / sampler.rates(newv)
            if sampler.attempts > 10_000 and sampler.accepts < MIN_ACCEPTANCE * sampler.attempts:
                raise NumericalAbort(
                    f"thinning acceptance {sampler.accepts / sampler.attempts:.2e} below {MIN_ACCEPTANCE:g}; "
                    "the rate envelope is far above the kernel"
                )
        for c, x in zip(cols, _observe_particles(v, M, spec)):
            c.append(x)
    meta = {
        "kernel": kernel.kernel_id, "N": N, "seed": seed, "t_end": t_end, "method": "jump",
        "acceptance": sampler.accepts / max(sampler.attempts, 1), "attempts": sampler.attempts,
        "final_velocities": v,
    }
    return SimulationTrace(times, *map(np.asarray, cols), meta=meta)


# ---------------------------------------------------------------------------
# Grid evolution


def grid_evolve(f0: GridDensity, tensor: KernelTensor, t_end: float, dt: Optional[float] = None,
                observe=None) -> SimulationTrace:
    """Exponential-Euler evolution ``f <- e^{-sigma dt} f + (1 - e^{-sigma dt}) / sigma * L_+ f``.

    Mass is renormalized after each step and the drift recorded. Observables are recorded at
    every step unless ``observe`` gives a number of uniformly spaced records.
    """
    if f0.spec != tensor.spec:
        raise ValueError("density and kernel tensor live on different grids")
    sig = tensor.sigma
    smax = float(sig.max())
    if dt is None:
        dt = 0.01 / smax
    if dt > 0.5 / smax:
        raise ValueError(f"dt = {dt:g} exceeds the stability limit 0.5/max sigma = {0.5 / smax:g}")
    nsteps = int(math.ceil(t_end / dt - 1e-9))
    dt = t_end / nsteps
    stride = 1 if observe is None else max(1, nsteps // int(observe))
    M = tensor.maxwellian
    spec = f0.spec
    hv = spec.cell_volume
    Mv = M.pdf(spec.points())
    r2 = np.sum((spec.points() - M.center) ** 2, axis=1)
    Mmass = Mv.sum() * hv
    decay = np.exp(-sig * dt)
    frac = (1.0 - decay) / sig
    f = f0.flat.copy()
    mass0 = f.sum() * hv
    max_drift = 0.0
    rows = []

    def record(t, f):
        H = relative_entropy(GridDensity(spec, f), M).value
        T = float(np.sum(r2 * (f - Mv / Mmass)) * hv)
        l1 = float(np.sum(np.abs(f - Mv / Mmass)) * hv)
        rows.append((t, H, T, l1))

    record(0.0, f)
    for step in range(1, nsteps + 1):
        f = decay * f + frac * tensor.gain_values(f)
        if np.any(f < -1e-12):
            raise NumericalAbort(f"negative density {f.min():.3e} at t = {step * dt:g}; kernel tensor is corrupt")
        f = np.maximum(f, 0.0)
        m = f.sum() * hv
        max_drift = max(max_drift, abs(m - mass0) / dt)
        f *= mass0 / m
        if step % stride == 0 or step == nsteps:
            record(step * dt, f)
    arr = np.array(rows)
    z = np.zeros(len(arr))
    meta = {"kernel": tensor.kernel_id, "grid": spec.grid_id, "dt": dt, "method": "grid",
            "max_mass_drift_rate": max_drift, "final_values": f, "seed": ""}
    return SimulationTrace(arr[:, 0], arr[:, 1], z, arr[:, 2], z, arr[:, 3], meta=meta)


# ---------------------------------------------------------------------------
# Post-processing


def rescale_grazing(trace: SimulationTrace, epsilon: float) -> SimulationTrace:
    """Diffusive time scaling ``t -> eps^2 t`` of a trace produced with a grazing(eps) kernel."""
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    meta = dict(trace.meta, rescaled_epsilon=epsilon)
    return replace(trace, times=trace.times * epsilon ** 2, meta=meta)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    r2: float
    rate_se: float
    window: tuple
    n_points: int


def fit_log_linear(t, y, window: Optional[Sequence[float]] = None, label: str = "observable") -> DecayFit:
    """Least-squares slope of ``-log(y)`` against t on a time window.

    If y is not positive throughout the window, the window is shrunk to the leading
    positive stretch and a warning is issued.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    lo, hi = (t[0], t[-1]) if window is None else window
    sel = (t >= lo) & (t <= hi)
    t, y = t[sel], y[sel]
    bad = np.flatnonzero(y <= 0)
    if bad.size:
        warnings.warn(f"{label} is not positive on the whole window; shrinking it", RuntimeWarning)
        t, y = t[:bad[0]], y[:bad[0]]
    if len(t) < 3:
        raise ValueError("fewer than three positive points in the fit window")
    ly = np.log(y)
    A = np.vstack([t, np.ones_like(t)]).T
    coef = np.linalg.lstsq(A, ly, rcond=None)[0]
    ss_res = float(np.sum((ly - A @ coef) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    sxx = float(np.sum((t - t.mean()) ** 2))
    se = math.sqrt(ss_res / max(len(t) - 2, 1) / sxx) if sxx > 0 else math.inf
    return DecayFit(-float(coef[0]), r2, se, (float(t[0]), float(t[-1])), len(t))


def fit_decay_rate(trace: SimulationTrace, observable: str = "temperature",
                   window: Optional[Sequence[float]] = None) -> DecayFit:
    return fit_log_linear(trace.times, trace.observable(observable), window, observable)


def signal_window(trace: SimulationTrace, observable: str = "temperature",
                  max_rel_error: float = 0.02) -> tuple[float, float]:
    """Fit window from t = 0 to the last time before ``stderr / |observable|`` first exceeds ``max_rel_error``.

    Beyond that point particle noise dominates the logarithm and biases a log-linear fit.
    Traces without standard errors (grid, radial FP) keep their full time range.
    """
    y = np.abs(trace.observable(observable))
    se = trace.entropy_se if observable == "entropy" else trace.temperature_se
    if observable == "l1" or not np.any(se > 0):
        return float(trace.times[0]), float(trace.times[-1])
    noisy = np.flatnonzero(se > max_rel_error * y)
    stop = len(y) - 1 if noisy.size == 0 else max(int(noisy[0]) - 1, 2)
    return float(trace.times[0]), float(trace.times[stop])


# ---------------------------------------------------------------------------
# Lower-bound probe


@dataclass(frozen=True)
class LowerBoundProbe:
    c: float
    p: float
    t: float
    radii: np.ndarray
    partial_integrals: np.ndarray
    l2_norm_sq: float
    diverges: bool
    monotone: bool


def lower_bound_probe(c: float, kernel: CollisionKernel, M: Maxwellian, t: float, p: float,
                      radii: Optional[Sequence[float]] = None) -> LowerBoundProbe:
    """Partial ``L^p(M dv)`` integrals of ``g(t, v) = exp(-sigma(v) t) h0(v)``, ``h0 = exp(c |v - u0|^2)``.

    The radial integrals ``int_{|w|<R} g^p M dw`` are computed by adaptive quadrature on
    balls of increasing radius. h0 must lie in L^2(M dv), i.e. ``c < 1/(4 theta)``.
    """
    th, d = M.theta, M.dim
    if not c < 1 / (4 * th):
        raise ValueError(f"h0 = exp(c|v-u0|^2) is not in L^2(M dv) for c = {c:g} >= 1/(4 theta)")
    if radii is None:
        radii = np.linspace(1.0, 12.0, 23) * math.sqrt(th)
    radii = np.asarray(radii, dtype=float)
    kappa = p * c - 1 / (2 * th)
    pref = sphere_area(d) * (2 * math.pi * th) ** (-d / 2)
    if kernel.gamma == 0.0:
        sig0 = kernel.angular_mass * kernel.beta_scale

        def sigma(r):
            return sig0
    else:
        def sigma(r):
            return float(collision_frequency(kernel, M, [M.center + r * np.eye(d)[0]])[0])

    def integrand(r, q):
        return r ** (d - 1) * math.exp(kappa * r * r - q * sigma(r) * t) if q == p else \
            r ** (d - 1) * math.exp((2 * c - 1 / (2 * th)) * r * r - 2 * sigma(r) * t)

    parts = []
    prev, acc = 0.0, 0.0
    for R in radii:
        acc += integrate.quad(integrand, prev, R, args=(p,), epsabs=0.0, epsrel=1e-12, limit=200)[0]
        parts.append(pref * acc)
        prev = R
    l2 = pref * integrate.quad(integrand, 0, np.inf, args=(2.0,), epsabs=0.0, epsrel=1e-12, limit=200)[0]
    parts = np.array(parts)
    return LowerBoundProbe(c, p, t, radii, parts, l2, kappa >= 0, bool(np.all(np.diff(parts) > 0)))
