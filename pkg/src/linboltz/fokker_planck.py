"""Grazing-limit structures: diffusion matrices D_gamma(v), the functional J_gamma, a radial
Fokker-Planck solver, and the Bakry-Emery scan of the scalar functions A and B."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
from scipy import linalg, special, stats

from .core import GridDensity, GridSpec, Maxwellian, make_rng
from .functionals import FunctionalReport, _clamped_ratio, _grid_values
from .simulate import SimulationTrace

SERIES_SWITCH = 0.1
SERIES_TERMS = 14
ALPHA1_BOUND = 143 / 60
ALPHA2_BOUND = 7 / 3


def s_matrix(v, vstar) -> np.ndarray:
    """``S(v, v_*) = |v - v_*|^2 I - (v - v_*) (x) (v - v_*)``, vectorized over leading axes."""
    q = np.asarray(v, dtype=float) - np.asarray(vstar, dtype=float)
    d = q.shape[-1]
    return np.sum(q * q, axis=-1)[..., None, None] * np.eye(d) - q[..., :, None] * q[..., None, :]


# ---------------------------------------------------------------------------
# exp/erf combinations  e^{-x^2} p(x) + (sqrt(pi) erf(x)/x) r(x)


def _e_coeffs(n):
    return [Fraction((-1) ** j, math.factorial(j)) for j in range(n)]


def _E_coeffs(n):
    return [Fraction(2 * (-1) ** j, math.factorial(j) * (2 * j + 1)) for j in range(n)]


class ErfCombination:
    """``F(x) = e^{-x^2} p(x) + (sqrt(pi) erf(x) / x) r(x)`` for Laurent polynomials p, r in x^2.

    Closed forms are used for ``x >= SERIES_SWITCH``; below it a Taylor series with exact
    rational coefficients avoids the cancellation of the negative powers.
    """

    def __init__(self, p: dict, r: dict, name: str = ""):
        self.p = {int(k): Fraction(v) for k, v in p.items()}  # power of x -> coefficient
        self.r = {int(k): Fraction(v) for k, v in r.items()}
        self.name = name
        n = SERIES_TERMS + 4
        a, b = _e_coeffs(n), _E_coeffs(n)
        coeffs = {}
        for poly, base in ((self.p, a), (self.r, b)):
            for pw, c in poly.items():
                if pw % 2:
                    raise ValueError("only even powers are supported")
                for j, bj in enumerate(base):
                    k = pw // 2 + j
                    coeffs[k] = coeffs.get(k, Fraction(0)) + c * bj
        for k, c in coeffs.items():
            if k < 0 and c != 0:
                raise ValueError(f"{name}: negative powers do not cancel, x^{2 * k} coefficient {c}")
        self.series = [float(coeffs.get(k, 0)) for k in range(SERIES_TERMS)]

    @staticmethod
    def _poly(poly: dict, x, deriv: int = 0):
        out = np.zeros_like(x)
        for pw, c in poly.items():
            k = pw
            coef = float(c)
            for _ in range(deriv):
                coef *= k
                k -= 1
            if coef != 0:
                out = out + coef * x ** k
        return out

    def _closed(self, x, deriv):
        e = np.exp(-x * x)
        E = np.sqrt(np.pi) * special.erf(x) / x
        p = [self._poly(self.p, x, k) for k in range(3)]
        r = [self._poly(self.r, x, k) for k in range(3)]
        if deriv == 0:
            return e * p[0] + E * r[0]
        e1 = -2 * x * e
        E1 = (2 * e - E) / x
        if deriv == 1:
            return e1 * p[0] + e * p[1] + E1 * r[0] + E * r[1]
        e2 = (4 * x * x - 2) * e
        E2 = -4 * e - 4 * e / x ** 2 + 2 * E / x ** 2
        return e2 * p[0] + 2 * e1 * p[1] + e * p[2] + E2 * r[0] + 2 * E1 * r[1] + E * r[2]

    def _series(self, x, deriv):
        if deriv == 1:
            return self._series_d1(x)
        if deriv == 2:
            return self._series_d2(x)
        x2 = x * x
        out = np.zeros_like(x)
        for k in range(SERIES_TERMS - 1, -1, -1):
            out = out * x2 + self.series[k]
        return out

    def _series_d1(self, x):
        x2 = x * x
        out = np.zeros_like(x)
        for k in range(SERIES_TERMS - 1, 0, -1):
            out = out * x2 + 2 * k * self.series[k]
        return out * x

    def _series_d2(self, x):
        x2 = x * x
        out = np.zeros_like(x)
        for k in range(SERIES_TERMS - 1, 0, -1):
            out = out * x2 + 2 * k * (2 * k - 1) * self.series[k]
        return out

    def __call__(self, x, deriv: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        if np.any(x < 0):
            raise ValueError("argument must be nonnegative")
        small = x < SERIES_SWITCH
        out = np.empty_like(x)
        if np.any(small):
            out[small] = self._series(x[small], deriv)
        if np.any(~small):
            out[~small] = self._closed(x[~small], deriv)
        return out[0] if scalar else out

    def seam_jump(self, deriv: int = 0) -> float:
        xs = np.array([SERIES_SWITCH])
        return float(abs(self._series(xs, deriv)[0] - self._closed(xs, deriv)[0]))


F = Fraction
# moments of |w|^3 and |w| w (x) w against exp(-gamma |w + a|^2), in units pi / gamma^3
S3 = ErfCombination({2: 1, 0: F(5, 2)}, {4: 1, 2: 3, 0: F(3, 4)}, "S3")
P_PERP = ErfCombination({0: F(1, 2), -2: F(1, 4)}, {2: F(1, 2), 0: F(1, 2), -2: F(-1, 8)}, "P")
Q_PAR = ErfCombination({2: 1, 0: 1, -2: F(-3, 4)}, {4: 1, 2: F(3, 2), 0: F(-3, 4), -2: F(3, 8)}, "Q")
# D_1 coefficients: C = S3 - P - Q, T = Q
C_FUNC = ErfCombination({0: 1, -2: F(1, 2)}, {2: 1, 0: 1, -2: F(-1, 4)}, "C")
T_FUNC = ErfCombination({2: 1, 0: 1, -2: F(-3, 4)}, {4: 1, 2: F(3, 2), 0: F(-3, 4), -2: F(3, 8)}, "T")
# legacy coefficients: C with erf bracket (7/4)x^2 + 1 - 1/(4x^2), T with x^2 coefficient 3/4;
# not the moments of |w|^3 e^{-g|w+a|^2}, kept for comparison scans
C_FUNC_LEGACY = ErfCombination({0: 1, -2: F(1, 2)}, {2: F(7, 4), 0: 1, -2: F(-1, 4)}, "C_legacy")
T_FUNC_LEGACY = ErfCombination({2: 1, 0: 1, -2: F(-3, 4)}, {4: 1, 2: F(3, 4), 0: F(-3, 4), -2: F(3, 8)},
                              "T_legacy")
Q_PAR_LEGACY = T_FUNC_LEGACY


@dataclass(frozen=True)
class CurvatureFunctions:
    """Scalar functions C, T, A, B of ``x = gamma_B^{1/2} |a|`` with ``gamma_B = 1/(2 theta)``, ``a = u0 - v``."""

    C: ErfCombination
    T: ErfCombination
    variant: str = "corrected"

    @classmethod
    def corrected(cls) -> "CurvatureFunctions":
        return cls(C_FUNC, T_FUNC, "corrected")

    @classmethod
    def legacy(cls) -> "CurvatureFunctions":
        return cls(C_FUNC_LEGACY, T_FUNC_LEGACY, "legacy")

    def A(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        c, c1, c2 = self.C(x), self.C(x, 1), self.C(x, 2)
        c1_over_x = np.where(x > 0, c1 / np.where(x > 0, x, 1.0), self.C.series[1] * 2)
        return 0.5 * c2 - x * c1 - c1_over_x + 2 * c

    def B(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        c, c1, c2 = self.C(x), self.C(x, 1), self.C(x, 2)
        c1_over_x = np.where(x > 0, c1 / np.where(x > 0, x, 1.0), self.C.series[1] * 2)
        return c2 - 2 * x * c1 - c1_over_x + 0.25 * c1 * c1 / c


def cubic_moments(a, gamma_B: float, variant: str = "corrected") -> tuple[float, np.ndarray]:
    """``int |w|^3 e^{-gamma|w+a|^2} dw`` and ``int |w| w (x) w e^{-gamma|w+a|^2} dw`` in closed form."""
    a = np.asarray(a, dtype=float)
    na = float(np.linalg.norm(a))
    x = math.sqrt(gamma_B) * na
    pref = math.pi / gamma_B ** 3
    Q = Q_PAR if variant == "corrected" else Q_PAR_LEGACY
    ahat = a / na if na > 0 else np.eye(len(a))[0]
    scalar = pref * float(S3(x))
    mat = pref * (float(P_PERP(x)) * np.eye(len(a)) + float(Q(x)) * np.outer(ahat, ahat))
    return scalar, mat


def cubic_moments_mc(a, gamma_B: float, n: int, seed: int = 0, batches: int = 100):
    """Monte-Carlo oracle with ``w = z - a``, ``z ~ N(0, I/(2 gamma))``.

    ``|w|^2`` and ``w (x) w`` (known means) serve as control variates with coefficients fitted on
    batch means. Returns (scalar, scalar stderr, matrix, matrix stderr).
    """
    a = np.asarray(a, dtype=float)
    d = len(a)
    mass = (math.pi / gamma_B) ** (d / 2)
    sd = math.sqrt(1 / (2 * gamma_B))
    nb = n // batches
    ys, xs, Ym, Xm = [], [], [], []
    for b in range(batches):
        rng = make_rng(seed, b)
        w = sd * rng.standard_normal((nb, d)) - a
        r = np.linalg.norm(w, axis=1)
        ys.append(np.mean(r ** 3))
        xs.append(np.mean(r * r))
        Ym.append(np.einsum("n,ni,nj->ij", r, w, w) / nb)
        Xm.append(np.einsum("ni,nj->ij", w, w) / nb)
    x_mean = a @ a + d * sd ** 2
    X_mean = np.outer(a, a) + sd ** 2 * np.eye(d)

    def adjust(y, x, mu):
        xc = x - x.mean(axis=0)
        beta = np.sum(xc * (y - y.mean(axis=0)), axis=0) / np.maximum(np.sum(xc * xc, axis=0), 1e-300)
        adj = mass * (y - beta * (x - mu))
        return adj.mean(axis=0), adj.std(axis=0, ddof=1) / math.sqrt(len(y))

    s, s_se = adjust(np.array(ys), np.array(xs), x_mean)
    m, m_se = adjust(np.array(Ym), np.array(Xm), X_mean)
    return float(s), float(s_se), m, m_se


def d1_from_moments(M: Maxwellian, v, variant: str = "corrected") -> np.ndarray:
    """``D_1(v) = (1/8) (gamma/pi)^{3/2} (S3 I - int |w| w (x) w ...)`` with ``a = u0 - v``."""
    g = 1 / (2 * M.theta)
    s, m = cubic_moments(M.center - np.asarray(v, dtype=float), g, variant)
    return 0.125 * (g / math.pi) ** 1.5 * (s * np.eye(3) - m)


# ---------------------------------------------------------------------------
# Diffusion matrices


@dataclass(frozen=True)
class DiffusionMatrix:
    gamma: float
    M: Maxwellian
    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __call__(self, v) -> np.ndarray:
        return self.evaluator(np.asarray(v, dtype=float))

    @classmethod
    def closed(cls, gamma: int, M: Maxwellian) -> "DiffusionMatrix":
        return cls(float(gamma), M, lambda v: diffusion_matrix_closed(gamma, M, v))


def diffusion_matrix_closed(gamma: int, M: Maxwellian, v) -> np.ndarray:
    """``D_gamma(v) = 1/8 int |v - v_*|^gamma S(v, v_*) M(v_*) dv_*`` for gamma in {0, 1}.

    gamma = 0 (any d): ``(1/8)(S(v, u0) + (d - 1) theta I)``.
    gamma = 1 (d = 3): ``(1/(8 sqrt(pi) g^{3/2})) [C(x) I + T(x)(I - a^ (x) a^)]`` with
    ``g = 1/(2 theta)``, ``a = u0 - v`` and ``x = sqrt(g) |a|``.
    """
    v = np.asarray(v, dtype=float)
    d = M.dim
    if gamma == 0:
        return 0.125 * (s_matrix(v, M.center) + (d - 1) * M.theta * np.eye(d))
    if gamma == 1:
        if d != 3:
            raise ValueError("the closed form of D_1 is available in d = 3 only")
        g = 1 / (2 * M.theta)
        a = M.center - v
        na = np.linalg.norm(a, axis=-1)
        x = math.sqrt(g) * na
        C = C_FUNC(x)
        T = T_FUNC(x)
        safe = np.where(na > 0, na, 1.0)[..., None]
        ahat = np.where(na[..., None] > 0, a / safe, 0.0)
        proj = np.eye(3) - ahat[..., :, None] * ahat[..., None, :]
        pref = 1 / (8 * math.sqrt(math.pi) * g ** 1.5)
        return pref * (np.asarray(C)[..., None, None] * np.eye(3) + np.asarray(T)[..., None, None] * proj)
    raise ValueError("closed forms exist for gamma in {0, 1}; use diffusion_matrix_mc")


def diffusion_matrix_mc(gamma: float, M: Maxwellian, v, n: int, seed: int = 0, batches: int = 100,
                        control_variate: bool = True):
    """Monte-Carlo average of ``|v - v_*|^gamma S(v, v_*) / 8`` over ``v_* ~ M``.

    With ``control_variate`` the gamma = 0 integrand (known mean D_0) is used as a control
    variate with batch-estimated coefficients. Returns (matrix, standard error matrix).
    """
    v = np.asarray(v, dtype=float)
    D0 = diffusion_matrix_closed(0, M, v)
    nb = n // batches
    xs, ys = [], []
    for b in range(batches):
        rng = make_rng(seed, b)
        vs = M.sample(nb, rng)
        S = s_matrix(v, vs) / 8.0
        r = np.linalg.norm(v - vs, axis=1)
        Y = (r ** gamma)[:, None, None] * S
        xs.append(S.mean(axis=0))
        ys.append(Y.mean(axis=0))
    xs, ys = np.array(xs), np.array(ys)
    if control_variate and gamma != 0:
        xc = xs - xs.mean(axis=0)
        yc = ys - ys.mean(axis=0)
        beta = np.sum(xc * yc, axis=0) / np.maximum(np.sum(xc * xc, axis=0), 1e-300)
        adj = ys - beta * (xs - D0)
    else:
        adj = ys
    return adj.mean(axis=0), adj.std(axis=0, ddof=1) / math.sqrt(batches)


# ---------------------------------------------------------------------------
# J_gamma


def j_gamma(f, M: Maxwellian, Dmat: DiffusionMatrix, spec: Optional[GridSpec] = None) -> FunctionalReport:
    """``J_gamma(f|M) = int (D_gamma grad g) . grad g / g dM`` with ``g = f/M`` on a grid."""
    fv, spec = _grid_values(f, M, spec)
    pts = spec.points()
    Mv = M.pdf(pts)
    g, clamped = _clamped_ratio(fv, Mv)
    if np.any(g <= 0):
        raise ValueError("J_gamma needs f > 0 on the grid")
    logg = np.log(g).reshape(spec.shape)
    grads = np.gradient(logg, spec.h, edge_order=2)
    G = np.stack([gk.ravel() for gk in grads], axis=1)
    fw = fv / (np.sum(fv) * spec.cell_volume) if isinstance(f, GridDensity) else fv
    total = 0.0
    for i0 in range(0, len(pts), 65536):
        sl = slice(i0, i0 + 65536)
        D = Dmat(pts[sl])
        total += float(np.sum(fw[sl] * np.einsum("ni,nij,nj->n", G[sl], D, G[sl])))
    return FunctionalReport(f"J_{Dmat.gamma:g}", total * spec.cell_volume, 0.0, "grid", spec.size, clamped,
                            ("one-sided boundary",))


# ---------------------------------------------------------------------------
# Radial Fokker-Planck


@dataclass(frozen=True)
class RadialGrid:
    theta: float
    n: int
    R: float

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.R, self.n + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[1:] + e[:-1])

    @property
    def volumes(self) -> np.ndarray:
        e = self.edges
        return 4 * math.pi / 3 * (e[1:] ** 3 - e[:-1] ** 3)

    def cell_average(self, variance: float) -> np.ndarray:
        """Cell averages of the 3-D Gaussian N(0, variance I) (chi distribution cell masses)."""
        cdf = stats.chi.cdf(self.edges / math.sqrt(variance), 3)
        return np.diff(cdf) / self.volumes


def _radial_operator(grid: RadialGrid, Mk: np.ndarray):
    """Face transmissibilities of ``div((theta/4) M grad g)`` with geometric-mean face Maxwellians."""
    e = grid.edges[1:-1]
    dr = grid.R / grid.n
    Mf = np.sqrt(Mk[1:] * Mk[:-1])
    return 4 * math.pi * e ** 2 * Mf * (grid.theta / 4) / dr


def fp_radial_evolve(f0, theta: float, t_end: float, dt: Optional[float] = None, n_r: int = 240,
                     R: float = 6.0, scheme: str = "implicit", observe: int = 200) -> SimulationTrace:
    """Radial Fokker-Planck ``df/dt = div((theta/4)(grad f + v f / theta))`` in d = 3 with u0 = 0.

    Conservative finite volumes in ``g = f/M``: the face flux ``K_f (g_{k+1} - g_k)`` vanishes for
    g constant, so M is exactly stationary and mass is conserved to round-off. ``f0`` is a
    callable of r (evaluated at cell centers), an array of cell values, or ``("gaussian", var)``.
    The default time step is ``0.4 dr^2 / (theta/4)`` with backward Euler; ``scheme="explicit"``
    aborts when that step would break positivity.
    """
    grid = RadialGrid(theta, n_r, R * math.sqrt(theta))
    dr = grid.R / n_r
    V = grid.volumes
    Mk = grid.cell_average(theta)
    if isinstance(f0, tuple) and f0[0] == "gaussian":
        fk = grid.cell_average(float(f0[1]))
    elif callable(f0):
        fk = np.asarray(f0(grid.centers), dtype=float)
    else:
        fk = np.asarray(f0, dtype=float)
    if fk.shape != (n_r,) or np.any(fk < 0):
        raise ValueError("initial radial profile must be nonnegative with one value per cell")
    mM = float(np.sum(Mk * V))
    fk = fk * mM / float(np.sum(fk * V))
    K = _radial_operator(grid, Mk)
    # dg_k/dt = (K_{k+1/2}(g_{k+1}-g_k) - K_{k-1/2}(g_k-g_{k-1})) / (V_k M_k)
    w = V * Mk
    lower = np.zeros(n_r)
    upper = np.zeros(n_r)
    upper[:-1] = K / w[:-1]
    lower[1:] = K / w[1:]
    diag = -(upper + lower)
    if dt is None:
        dt = 0.4 * dr ** 2 / (theta / 4)
    nsteps = int(math.ceil(t_end / dt - 1e-9))
    dt = t_end / nsteps
    if scheme == "explicit":
        if np.max(-diag) * dt > 1.0:
            raise FloatingPointError(
                f"explicit step dt = {dt:.3g} breaks positivity (max rate {np.max(-diag):.3g}); "
                "use scheme='implicit' or a smaller dt"
            )
    elif scheme != "implicit":
        raise ValueError("scheme must be 'implicit' or 'explicit'")
    ab = np.zeros((3, n_r))
    ab[0, 1:] = -dt * upper[:-1]
    ab[1] = 1 - dt * diag
    ab[2, :-1] = -dt * lower[1:]
    g = fk / Mk
    r2 = grid.centers ** 2
    mass0 = float(np.sum(g * w))
    stride = max(1, nsteps // observe)
    rows = []

    def record(t, g):
        f = g * Mk
        gl = np.log(np.clip(g, 1e-300, None))
        H = float(np.sum(w * np.where(g > 0, g * gl, 0.0)))
        T = float(np.sum(V * r2 * (f - Mk)))
        l1 = float(np.sum(V * np.abs(f - Mk)))
        rows.append((t, H, T, l1, float(np.sum(g * w))))

    record(0.0, g)
    for step in range(1, nsteps + 1):
        if scheme == "implicit":
            g = linalg.solve_banded((1, 1), ab, g)
        else:
            Lg = diag * g
            Lg[:-1] += upper[:-1] * g[1:]
            Lg[1:] += lower[1:] * g[:-1]
            g = g + dt * Lg
        if np.any(g < -1e-12):
            raise FloatingPointError(f"negative density at step {step}")
        if step % stride == 0 or step == nsteps:
            record(step * dt, g)
    arr = np.array(rows)
    z = np.zeros(len(arr))
    meta = {"method": "fp_radial", "dt": dt, "n_r": n_r, "scheme": scheme, "seed": "",
            "max_mass_error": float(np.max(np.abs(arr[:, 4] - mass0)) / mass0),
            "radii": grid.centers, "final_profile": g * Mk, "maxwellian_profile": Mk}
    return SimulationTrace(arr[:, 0], arr[:, 1], z, arr[:, 2], z, arr[:, 3], meta=meta)


# ---------------------------------------------------------------------------
# Bakry-Emery scan


@dataclass(frozen=True)
class BakryEmeryScan:
    variant: str
    min_A: float
    argmin_A: float
    min_AmB: float
    argmin_AmB: float
    alpha: float
    alpha_bound: float
    min_C: float
    min_T: float
    seam_jump: float
    n_points: int


def default_x_grid(n_log: int = 6000, n_lin: int = 6000) -> np.ndarray:
    return np.unique(np.concatenate([np.geomspace(1e-6, 1.0, n_log), np.linspace(1.0, 20.0, n_lin)]))


def bakry_emery_scan(theta: float = 1.0, x_grid: Optional[np.ndarray] = None,
                     variant: str = "corrected") -> BakryEmeryScan:
    """Minima of A and A - B over |x| in (0, 20] and the resulting log-Sobolev constant
    ``alpha = min(alpha_1, alpha_2) / (8 sqrt(pi gamma_B))``, next to the value 7/24 sqrt(2 theta/pi)."""
    fn = CurvatureFunctions.corrected() if variant == "corrected" else CurvatureFunctions.legacy()
    x = default_x_grid() if x_grid is None else np.asarray(x_grid, dtype=float)
    if np.any(x <= 0):
        raise ValueError("scan grid must lie in (0, 20]")
    A = fn.A(x)
    AmB = A - fn.B(x)
    gB = 1 / (2 * theta)
    i, j = int(np.argmin(A)), int(np.argmin(AmB))
    seam = max(fn.C.seam_jump(k) for k in range(3))
    xs = np.array([SERIES_SWITCH * (1 - 1e-12), SERIES_SWITCH])
    seam = max(seam, float(np.abs(np.diff(fn.A(xs)))[0]), float(np.abs(np.diff(fn.B(xs)))[0]))
    alpha = min(A[i], AmB[j]) / (8 * math.sqrt(math.pi * gB))
    return BakryEmeryScan(variant, float(A[i]), float(x[i]), float(AmB[j]), float(x[j]), float(alpha),
                          7 / 24 * math.sqrt(2 * theta / math.pi), float(np.min(fn.C(x))),
                          float(np.min(fn.T(x))), seam, int(x.size))
