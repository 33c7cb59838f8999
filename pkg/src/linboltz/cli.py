"""Command-line experiment runner.

    linboltz run CONFIG [--seed S] [--out DIR]
    linboltz validate CONFIG
    linboltz list-presets

Exit codes: 0 all assertions pass, 1 an assertion failed, 2 configuration error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import carleman, fokker_planck, functionals, simulate
from .core import CollisionKernel, GridSpec, Maxwellian, ParticleEnsemble, make_rng
from .suites import SUITES, get_suite

log = logging.getLogger("linboltz")

EXPERIMENTS = ("verify-inequality", "simulate", "compare-kernels", "grazing-limit", "fokker-planck",
               "bakry-emery", "lower-bound-probe")
KERNEL_PRESETS = ("maxwell", "hard-spheres", "hard-potential", "grazing")

# section -> key -> (type, required)
SCHEMA: dict[str, dict[str, tuple]] = {
    "": {"experiment": (str, True), "seed": (int, False), "output": (str, False)},
    "maxwellian": {"dim": (int, False), "theta": (float, False), "u0": (list, False)},
    "kernel": {"preset": (str, True), "gamma": (float, False), "epsilon": (float, False), "scale": (float, False)},
    "kernel_tilde": {"preset": (str, True), "gamma": (float, False), "epsilon": (float, False),
                     "scale": (float, False)},
    "suite": {"name": (str, False)},
    "budget": {"n_mc": (int, False), "n_particles": (int, False), "grid_n": (int, False), "dt": (float, False),
               "t_end": (float, False), "n_pairs": (int, False), "n_points": (int, False)},
    "simulate": {"method": (str, False), "initial": (str, False), "window": (list, False)},
    "grazing": {"epsilons": (list, False), "window": (list, False)},
    "probe": {"c": (float, True), "p": (float, True), "t": (float, False)},
}

EXPERIMENT_SEEDED = {"verify-inequality", "simulate", "compare-kernels", "grazing-limit", "fokker-planck",
                     "bakry-emery"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    seed: Optional[int]
    output: str
    maxwellian: dict
    kernel: Optional[dict]
    kernel_tilde: Optional[dict]
    suite: str
    budget: dict
    simulate: dict
    grazing: dict
    probe: Optional[dict]
    source: str = ""

    def M(self) -> Maxwellian:
        d = self.maxwellian.get("dim", 3)
        u0 = self.maxwellian.get("u0", [0.0] * d)
        return Maxwellian(d, np.asarray(u0, dtype=float), float(self.maxwellian.get("theta", 1.0)))


def _check_type(path: str, value, typ):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, bool):
        raise ConfigError(f"{path}: expected int, got bool")
    if not isinstance(value, typ):
        raise ConfigError(f"{path}: expected {typ.__name__}, got {type(value).__name__}")
    return value


def parse_config(data: dict, source: str = "") -> ExperimentConfig:
    """Validate a parsed TOML document; unknown sections or keys are errors."""
    sections = {}
    top = {}
    for key, value in data.items():
        if isinstance(value, dict):
            if key not in SCHEMA or key == "":
                raise ConfigError(f"[{key}]: unknown section")
            sections[key] = value
        else:
            top[key] = value
    for name, body in [("", top)] + list(sections.items()):
        schema = SCHEMA[name]
        for key in body:
            if key not in schema:
                path = f"{name}.{key}" if name else key
                raise ConfigError(f"{path}: unknown key")
        for key, (typ, required) in schema.items():
            path = f"{name}.{key}" if name else key
            if key in body:
                body[key] = _check_type(path, body[key], typ)
            elif required:
                raise ConfigError(f"{path}: required key missing")
    exp = top["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown experiment {exp!r}; choose from {list(EXPERIMENTS)}")
    seed = top.get("seed")
    if exp in EXPERIMENT_SEEDED and seed is None:
        raise ConfigError("seed: stochastic experiments need an explicit seed")
    mx = sections.get("maxwellian", {})
    d = mx.get("dim", 3)
    if d < 2:
        raise ConfigError("maxwellian.dim: must be at least 2")
    if mx.get("theta", 1.0) <= 0:
        raise ConfigError("maxwellian.theta: must be positive")
    if "u0" in mx and len(mx["u0"]) != d:
        raise ConfigError("maxwellian.u0: length must equal dim")
    for name in ("kernel", "kernel_tilde"):
        if name in sections:
            _validate_kernel(name, sections[name])
    if exp in ("verify-inequality", "simulate", "compare-kernels") and "kernel" not in sections:
        raise ConfigError("kernel: section required for this experiment")
    if exp == "compare-kernels" and "kernel_tilde" not in sections:
        raise ConfigError("kernel_tilde: section required for compare-kernels")
    if exp == "lower-bound-probe" and "probe" not in sections:
        raise ConfigError("probe: section required for lower-bound-probe")
    budget = sections.get("budget", {})
    for key, value in budget.items():
        if value <= 0:
            raise ConfigError(f"budget.{key}: must be positive")
    suite = sections.get("suite", {}).get("name", "default")
    if suite not in SUITES:
        raise ConfigError(f"suite.name: unknown suite {suite!r}; choose from {sorted(SUITES)}")
    sim = sections.get("simulate", {})
    if sim.get("method", "jump") not in ("jump", "grid"):
        raise ConfigError("simulate.method: must be 'jump' or 'grid'")
    for name, sec in (("simulate", sim), ("grazing", sections.get("grazing", {}))):
        if "window" in sec and (len(sec["window"]) != 2 or not sec["window"][0] < sec["window"][1]):
            raise ConfigError(f"{name}.window: expected [t_start, t_stop] with t_start < t_stop")
    eps = sections.get("grazing", {}).get("epsilons", [1.0, 0.5, 0.25])
    if not eps or any(not (isinstance(e, (int, float)) and 0 < e <= 1) for e in eps):
        raise ConfigError("grazing.epsilons: values must lie in (0, 1]")
    return ExperimentConfig(exp, seed, top.get("output", "results"), mx, sections.get("kernel"),
                            sections.get("kernel_tilde"), suite, budget, sim, sections.get("grazing", {}),
                            sections.get("probe"), source)


def _validate_kernel(name: str, spec: dict):
    preset = spec["preset"]
    if preset not in KERNEL_PRESETS:
        raise ConfigError(f"{name}.preset: unknown kernel {preset!r}; choose from {list(KERNEL_PRESETS)}")
    if preset == "hard-potential" and "gamma" not in spec:
        raise ConfigError(f"{name}.gamma: required for hard-potential")
    if preset == "grazing":
        if "epsilon" not in spec:
            raise ConfigError(f"{name}.epsilon: required for grazing")
        if not 0 < spec["epsilon"] <= 1:
            raise ConfigError(f"{name}.epsilon: must lie in (0, 1]")
        if spec.get("gamma", 0.0) not in (0.0, 1.0):
            raise ConfigError(f"{name}.gamma: grazing kernels take gamma in {{0, 1}}")
    if spec.get("gamma", 0.0) < 0:
        raise ConfigError(f"{name}.gamma: must be nonnegative")
    if spec.get("scale", 1.0) <= 0:
        raise ConfigError(f"{name}.scale: must be positive")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, str(path))


def build_kernel(spec: dict, dim: int) -> CollisionKernel:
    preset = spec["preset"]
    if preset == "maxwell":
        k = CollisionKernel.maxwell_molecules(dim)
    elif preset == "hard-spheres":
        k = CollisionKernel.hard_potential(1.0, dim)
    elif preset == "hard-potential":
        k = CollisionKernel.hard_potential(spec["gamma"], dim)
    else:
        k = CollisionKernel.grazing(spec["epsilon"], spec.get("gamma", 0.0), dim)
    if "scale" in spec:
        k = k.scaled(spec["scale"])
    return k


def asserted_constant(kernel: CollisionKernel, M: Maxwellian) -> Optional[tuple[float, str]]:
    """The constant lambda in ``D(f) >= lambda H(f|M)`` asserted for a kernel, if any."""
    if kernel.is_maxwellian and kernel.is_normalized:
        return kernel.gamma_b(), "gamma_b"
    if kernel.kernel_id == "hard-spheres-d3":
        return math.sqrt(M.theta) / 4, "sqrt(theta)/4"
    return None


# ---------------------------------------------------------------------------
# results


@dataclass
class Assertion:
    name: str
    measured: float
    constant: float
    tolerance: float
    relation: str
    passed: bool
    constant_name: str = ""

    def as_dict(self):
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                for k, v in self.__dict__.items()}


@dataclass
class Results:
    experiment: str
    seed: Optional[int]
    assertions: list = field(default_factory=list)
    measurements: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def check(self, name, measured, relation, constant, tolerance=0.0, constant_name=""):
        measured, constant = float(measured), float(constant)
        if relation == ">=":
            ok = measured >= constant - tolerance
        elif relation == "<=":
            ok = measured <= constant + tolerance
        elif relation == "==":
            ok = abs(measured - constant) <= tolerance
        else:
            raise ValueError(relation)
        self.assertions.append(Assertion(name, measured, constant, float(tolerance), relation, bool(ok),
                                         constant_name))
        return ok

    def table(self, name, header, rows):
        self.tables[name] = (list(header), [list(r) for r in rows])

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)


def _fmt(x):
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else str(x)
    return str(x)


def write_outputs(res: Results, out: Path, cfg: ExperimentConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    for name, (header, rows) in res.tables.items():
        with open(out / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# generated {stamp}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
    summary = {
        "experiment": res.experiment,
        "seed": res.seed,
        "config": cfg.source,
        "passed": res.passed,
        "assertions": [a.as_dict() for a in res.assertions],
        "measurements": res.measurements,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n", encoding="utf-8")
    lines = [f"experiment: {res.experiment}", f"seed: {res.seed}", ""]
    for a in res.assertions:
        lines.append(f"[{'PASS' if a.passed else 'FAIL'}] {a.name}: {a.measured:.6g} {a.relation} "
                     f"{a.constant:.6g} ({a.constant_name}) tol {a.tolerance:.3g}")
    lines.append("")
    lines.append("overall: " + ("PASS" if res.passed else "FAIL"))
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# experiments


def _budget(cfg, key, default):
    return cfg.budget.get(key, default)


def exp_verify_inequality(cfg: ExperimentConfig, res: Results):
    M = cfg.M()
    K = build_kernel(cfg.kernel, M.dim)
    lam = asserted_constant(K, M)
    n_mc = _budget(cfg, "n_mc", functionals.DEFAULT_N_MC)
    rows = []
    ratios = []
    for label, f in get_suite(cfg.suite, M):
        H = functionals.relative_entropy(f, M)
        D = functionals.entropy_dissipation_mc(f, M, K, n_mc=n_mc, seed=cfg.seed)
        ckp = functionals.ckp_check(f, M)
        rows.append(H.csv_row(K.kernel_id, label, cfg.seed))
        rows.append(D.csv_row(K.kernel_id, label, cfg.seed))
        ratios.append(D.value / H.value)
        res.check(f"ckp[{label}]", ckp.l1, "<=", ckp.bound, 1e-9, "sqrt(2 H)")
        res.check(f"dissipation_nonnegative[{label}]", D.value, ">=", 0.0, 3 * D.std_error, "0")
        if lam is not None:
            res.check(f"D>=lambda*H[{label}]", D.value, ">=", lam[0] * H.value, 3 * D.std_error, lam[1])
    res.table("functionals", functionals.CSV_HEADER, rows)
    res.measurements["min_D_over_H"] = float(min(ratios))
    if lam is not None:
        res.measurements["lambda"] = lam[0]


def exp_simulate(cfg: ExperimentConfig, res: Results):
    M = cfg.M()
    K = build_kernel(cfg.kernel, M.dim)
    suite = dict(get_suite("default", M))
    label = cfg.simulate.get("initial", "temp-2")
    if label not in suite:
        raise ConfigError(f"simulate.initial: unknown density {label!r}; choose from {sorted(suite)}")
    f0 = suite[label]
    t_end = _budget(cfg, "t_end", 10.0)
    window = cfg.simulate.get("window")
    method = cfg.simulate.get("method", "jump")
    if method == "jump":
        n = _budget(cfg, "n_particles", 100_000)
        ens = ParticleEnsemble(f0.sample(n, make_rng(cfg.seed, 0x5EED)), cfg.seed)
        trace = simulate.jump_simulate(ens, M, K, t_end, seed=cfg.seed)
        fit = simulate.fit_decay_rate(trace, "temperature", window or simulate.signal_window(trace))
        res.measurements.update(temperature_rate=fit.rate, r2=fit.r2)
        if K.is_maxwellian and K.is_normalized:
            g = K.gamma_b()
            res.check("temperature_rate", fit.rate, "==", g, 0.05 * g, "gamma_b")
            res.check("temperature_fit_r2", fit.r2, ">=", 0.999, 0.0, "r2")
    else:
        spec = GridSpec.default(M, _budget(cfg, "grid_n", None))
        tensor = carleman.precompute_kernel(K, M, spec, cache_dir=Path(cfg.output) / "cache")
        try:
            trace = simulate.grid_evolve(f0.on_grid(spec), tensor, t_end, _budget(cfg, "dt", None))
        except ValueError as exc:
            raise ConfigError(f"budget.dt: {exc}") from None
        fit = simulate.fit_decay_rate(trace, "entropy", window)
        res.measurements.update(entropy_rate=fit.rate, r2=fit.r2,
                                max_mass_drift_rate=trace.meta["max_mass_drift_rate"])
        res.check("entropy_monotone", float(np.max(np.diff(trace.entropy))), "<=", 0.0, 1e-12, "dH/dt <= 0")
        res.check("mass_drift_per_unit_time", trace.meta["max_mass_drift_rate"], "<=", 1e-6, 0.0, "1e-6")
        if K.is_maxwellian and K.is_normalized:
            g = K.gamma_b()
            res.check("entropy_rate", fit.rate, ">=", g, 0.05 * g, "gamma_b")
    header, rows = trace.csv_rows()
    res.table("trace", header, rows)


def exp_compare_kernels(cfg: ExperimentConfig, res: Results):
    M = cfg.M()
    B = build_kernel(cfg.kernel, M.dim)
    Bt = build_kernel(cfg.kernel_tilde, M.dim)
    cmp = carleman.comparison_constant(B, Bt, M.theta)
    ratios = carleman.kernel_ratio_pairs(B, Bt, M, _budget(cfg, "n_pairs", 1000), seed=cfg.seed)
    res.measurements.update(C_tilde=cmp.C_tilde, C_theta=cmp.C_theta, min_pair_ratio=float(ratios.min()))
    res.check("pointwise_k_ratio", float(ratios.min()), ">=", cmp.C_theta, 1e-3, "C_theta")
    if B.kernel_id == "hard-spheres-d3" and Bt.is_maxwellian:
        res.check("C_tilde", cmp.C_tilde, ">=", math.sqrt(M.theta) / 2, 1e-6, "sqrt(theta)/2")
    checks = functionals.dissipation_comparison_check(get_suite(cfg.suite, M), M, B, Bt, cmp.C_theta,
                                                      _budget(cfg, "n_mc", 2_000_000), cfg.seed)
    for c in checks:
        res.check(f"D_ratio[{c.label}]", c.ratio, ">=", c.constant, 3 * c.ratio_std_error, "C_theta")
    res.table("kernel_ratios", ["pair", "ratio"], [(i, float(r)) for i, r in enumerate(ratios)])
    res.table("dissipation_ratios", ["density", "ratio", "std_error", "constant"],
              [(c.label, c.ratio, c.ratio_std_error, c.constant) for c in checks])


def exp_grazing_limit(cfg: ExperimentConfig, res: Results):
    M = cfg.M()
    eps_list = [float(e) for e in cfg.grazing.get("epsilons", [1.0, 0.5, 0.25])]
    n = _budget(cfg, "n_particles", 100_000)
    t_end = _budget(cfg, "t_end", 6.0)
    window = cfg.grazing.get("window")
    f0 = ParticleEnsemble(np.sqrt(2.0) * M.sample(n, make_rng(cfg.seed, 0x5EED)) - (np.sqrt(2) - 1) * M.center,
                          cfg.seed)
    rows = []
    rescaled = []
    for eps in eps_list:
        K = CollisionKernel.grazing(eps, 0.0, M.dim)
        trace = simulate.jump_simulate(f0, M, K, t_end / eps ** 2, seed=cfg.seed)
        scaled = simulate.rescale_grazing(trace, eps)
        win = simulate.signal_window(scaled) if window is None else tuple(window)
        fit = simulate.fit_decay_rate(trace, "temperature", (win[0] / eps ** 2, win[1] / eps ** 2))
        rfit = simulate.fit_decay_rate(scaled, "temperature", win)
        g = eps ** 2 / 2
        res.check(f"temperature_rate[eps={eps:g}]", fit.rate, "==", g, 0.05 * g, "eps^2/2")
        res.check(f"rescaled_rate[eps={eps:g}]", rfit.rate, "==", 0.5, 0.025, "1/2")
        rescaled.append(rfit.rate)
        rows.append((eps, fit.rate, fit.r2, rfit.rate))
    if M.dim == 3:
        fp = fokker_planck.fp_radial_evolve(("gaussian", 2 * M.theta), M.theta, t_end)
        fp_fit = simulate.fit_log_linear(fp.times, np.abs(fp.temperature), window, "temperature")
        res.measurements["fp_temperature_rate"] = fp_fit.rate
        for eps, r in zip(eps_list, rescaled):
            res.check(f"fp_consistency[eps={eps:g}]", r, "==", fp_fit.rate, 0.1 * fp_fit.rate,
                      "radial FP temperature rate")
    res.table("grazing_rates", ["epsilon", "rate", "r2", "rescaled_rate"], rows)


def exp_fokker_planck(cfg: ExperimentConfig, res: Results):
    M = cfg.M()
    if M.dim != 3:
        raise ConfigError("maxwellian.dim: the fokker-planck experiment runs in d = 3")
    th = M.theta
    D0 = fokker_planck.diffusion_matrix_closed(0, M, M.center)
    res.check("D0(u0)=theta/4 I", float(np.max(np.abs(D0 - th / 4 * np.eye(3)))), "<=", 0.0, 1e-15, "theta/4")
    rng = make_rng(cfg.seed, 0xD1)
    n_mc = _budget(cfg, "n_mc", 10_000_000)
    rows = []
    for i in range(_budget(cfg, "n_points", 20)):
        v = M.center + math.sqrt(th) * rng.standard_normal(3) * 1.5
        Dc = fokker_planck.diffusion_matrix_closed(1, M, v)
        Dm, se = fokker_planck.diffusion_matrix_mc(1.0, M, v, n_mc, seed=cfg.seed + i)
        rel = float(np.linalg.norm(Dc - Dm) / np.linalg.norm(Dc))
        rows.append((i, *v, rel))
        res.check(f"D1_closed_vs_mc[{i}]", rel, "<=", 1e-3, 0.0, "0.1% relative")
    res.table("d1_check", ["index", "v1", "v2", "v3", "rel_error"], rows)
    alpha = 7 / 24 * math.sqrt(2 * th / math.pi)
    D0m = fokker_planck.DiffusionMatrix.closed(0, M)
    D1m = fokker_planck.DiffusionMatrix.closed(1, M)
    jrows = []
    for label, f in get_suite(cfg.suite, M):
        H = functionals.relative_entropy(f, M).value
        J0 = fokker_planck.j_gamma(f, M, D0m).value
        J1 = fokker_planck.j_gamma(f, M, D1m).value
        jrows.append((label, H, J0, J1))
        res.check(f"J0>=H/2[{label}]", J0, ">=", 0.5 * H, 0.02 * 0.5 * H, "1/2")
        res.check(f"J1>=2alpha*H[{label}]", J1, ">=", 2 * alpha * H, 0.02 * 2 * alpha * H, "(7/12)sqrt(2theta/pi)")
    res.table("j_gamma", ["density", "H", "J0", "J1"], jrows)
    if np.allclose(M.center, 0):
        fp = fokker_planck.fp_radial_evolve(("gaussian", 2 * th), th, _budget(cfg, "t_end", 10.0),
                                            _budget(cfg, "dt", None))
        fit = simulate.fit_log_linear(fp.times, fp.entropy, None, "entropy")
        res.measurements.update(fp_entropy_rate=fit.rate, fp_mass_error=fp.meta["max_mass_error"])
        res.check("fp_entropy_rate", fit.rate, ">=", 0.5, 0.025, "1/2")
        res.check("fp_mass_conservation", fp.meta["max_mass_error"], "<=", 1e-8, 0.0, "1e-8")
        res.table("fp_profile", ["r", "f"], zip(fp.meta["radii"], fp.meta["final_profile"]))
        header, trows = fp.csv_rows()
        res.table("fp_trace", header, trows)


def exp_bakry_emery(cfg: ExperimentConfig, res: Results):
    th = cfg.M().theta
    n = _budget(cfg, "n_points", None)
    grid = None if n is None else fokker_planck.default_x_grid(n // 2, n - n // 2)
    rows = []
    for variant in ("corrected", "legacy"):
        scan = fokker_planck.bakry_emery_scan(th, grid, variant)
        rows.append((variant, scan.min_A, scan.argmin_A, scan.min_AmB, scan.argmin_AmB, scan.alpha,
                     scan.alpha_bound, scan.seam_jump))
        res.check(f"min_A[{variant}]", scan.min_A, ">=", fokker_planck.ALPHA1_BOUND, 1e-6, "143/60")
        res.check(f"min_A-B[{variant}]", scan.min_AmB, ">=", fokker_planck.ALPHA2_BOUND, 1e-6, "7/3")
        res.check(f"seam_jump[{variant}]", scan.seam_jump, "<=", 1e-9, 0.0, "1e-9")
        res.measurements[f"alpha_{variant}"] = scan.alpha
        res.measurements["alpha_bound"] = scan.alpha_bound
    res.table("bakry_emery", ["variant", "min_A", "argmin_A", "min_AmB", "argmin_AmB", "alpha", "alpha_bound",
                              "seam_jump"], rows)
    rng = make_rng(cfg.seed, 0xB0)
    g = 1 / (2 * th)
    mrows = []
    n_mc = _budget(cfg, "n_mc", 10_000_000)
    for i in range(3):
        a = rng.standard_normal(3)
        s, m = fokker_planck.cubic_moments(a, g)
        s_mc, _, m_mc, _ = fokker_planck.cubic_moments_mc(a, g, n_mc, seed=cfg.seed + i)
        rs = abs(s - s_mc) / s
        rm = float(np.linalg.norm(m - m_mc) / np.linalg.norm(m))
        mrows.append((i, *a, rs, rm))
        res.check(f"moment_scalar[{i}]", rs, "<=", 1e-3, 0.0, "0.1% relative")
        res.check(f"moment_matrix[{i}]", rm, "<=", 1e-3, 0.0, "0.1% relative")
    res.table("moments", ["index", "a1", "a2", "a3", "scalar_rel_error", "matrix_rel_error"], mrows)


def exp_lower_bound_probe(cfg: ExperimentConfig, res: Results):
    M = cfg.M()
    K = CollisionKernel.maxwell_molecules(M.dim)
    c, p, t = cfg.probe["c"], cfg.probe["p"], cfg.probe.get("t", 1.0)
    try:
        probe = simulate.lower_bound_probe(c, K, M, t, p)
    except ValueError as exc:
        raise ConfigError(f"probe.c: {exc}") from None
    base = simulate.lower_bound_probe(c, K, M, 0.0, p)
    p_crit = math.inf if c <= 0 else 1 / (2 * M.theta * c)
    res.measurements.update(p_critical=p_crit, l2_norm_sq=probe.l2_norm_sq)
    res.check("diverges_iff_p_above_critical", float(probe.diverges), "==", float(p > p_crit), 0.0,
              "p > 1/(2 theta c)")
    res.check("partial_integrals_monotone", float(probe.monotone), "==", 1.0, 0.0, "monotone")
    scale = float(np.max(np.abs(probe.partial_integrals / base.partial_integrals - math.exp(-p * t))))
    res.check("time_factor_exp(-p t)", scale, "<=", 0.0, 1e-10 * math.exp(-p * t), "e^{-p t}")
    res.table("probe", ["R", "partial_integral"], zip(probe.radii, probe.partial_integrals))


RUNNERS = {
    "verify-inequality": exp_verify_inequality,
    "simulate": exp_simulate,
    "compare-kernels": exp_compare_kernels,
    "grazing-limit": exp_grazing_limit,
    "fokker-planck": exp_fokker_planck,
    "bakry-emery": exp_bakry_emery,
    "lower-bound-probe": exp_lower_bound_probe,
}


def run(cfg: ExperimentConfig, out: Optional[Path] = None) -> tuple[int, Results]:
    out = Path(out or cfg.output)
    cfg.output = str(out)
    res = Results(cfg.experiment, cfg.seed)
    RUNNERS[cfg.experiment](cfg, res)
    write_outputs(res, out, cfg)
    return (0 if res.passed else 1), res


# ---------------------------------------------------------------------------
# presets


def presets() -> dict:
    return {
        "kernels": [
            {"name": "maxwell-d3", "config": {"preset": "maxwell"}, "asserts": "D >= gamma_b H, gamma_b = 1/2"},
            {"name": "maxwell-d2", "config": {"preset": "maxwell"}, "asserts": "D >= gamma_b H, gamma_b = 1/2"},
            {"name": "hard-spheres-d3", "config": {"preset": "hard-spheres"},
             "asserts": "D_hs >= (sqrt(theta)/4) H; k_hs >= (sqrt(theta)/2) k_max"},
            {"name": "hard-potential(gamma)", "config": {"preset": "hard-potential", "gamma": "real >= 0"},
             "asserts": "D_gamma >= C theta^(gamma/2) D_0"},
            {"name": "grazing(eps,gamma)", "config": {"preset": "grazing", "epsilon": "(0, 1]", "gamma": "0 or 1"},
             "asserts": "gamma_eps = eps^2/2; temperature rate eps^2/2"},
        ],
        "suites": {name: [label for label, _ in fn(Maxwellian(3, np.zeros(3), 1.0))] for name, fn in SUITES.items()},
        "experiments": {
            "verify-inequality": "D(f) >= lambda H(f|M) and CKP on a density suite",
            "simulate": "temperature rate = gamma_b (jump) or entropy rate >= gamma_b (grid)",
            "compare-kernels": "k_B >= C_theta k_Btilde and D_B >= C_theta D_Btilde",
            "grazing-limit": "temperature rates eps^2/2, rescaled rates 1/2",
            "fokker-planck": "D0(u0) = theta/4 I; J0 >= H/2; J1 >= (7/12) sqrt(2 theta/pi) H; radial rate >= 1/2",
            "bakry-emery": "min A >= 143/60, min(A - B) >= 7/3, alpha = (7/24) sqrt(2 theta/pi)",
            "lower-bound-probe": "L^p(M) norm of exp(-t) h0 diverges for p > 1/(2 theta c)",
        },
    }


def list_presets(stream=None) -> dict:
    stream = stream or sys.stdout
    cat = presets()
    print("kernels:", file=stream)
    for k in cat["kernels"]:
        print(f"  {k['name']:24s} {k['asserts']}", file=stream)
    print("suites:", file=stream)
    for name, labels in cat["suites"].items():
        print(f"  {name:24s} {', '.join(labels)}", file=stream)
    print("experiments:", file=stream)
    for name, text in cat["experiments"].items():
        print(f"  {name:24s} {text}", file=stream)
    return cat


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="linboltz", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("config")
    sub.add_parser("list-presets", help="print kernels, suites and asserted constants")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.command == "list-presets":
        list_presets()
        return 0
    try:
        cfg = load_config(args.config)
        if args.command == "run" and args.seed is not None:
            cfg.seed = args.seed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.experiment})")
        return 0
    try:
        code, res = run(cfg, Path(args.out) if args.out else None)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (simulate.NumericalAbort, FloatingPointError, MemoryError) as exc:
        print(f"numerical abort: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    for a in res.assertions:
        if not a.passed:
            print(f"FAIL {a.name}: {a.measured:.6g} {a.relation} {a.constant:.6g} tol {a.tolerance:.3g}",
                  file=sys.stderr)
    print(f"{cfg.experiment}: {'PASS' if res.passed else 'FAIL'} "
          f"({sum(a.passed for a in res.assertions)}/{len(res.assertions)} assertions)")
    return code


if __name__ == "__main__":
    sys.exit(main())
