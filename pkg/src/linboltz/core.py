"""Maxwellians, collision kernels, density representations and collision geometry."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special

UNIT_TOL = 1e-12
MASS_TOL = 1e-8


def sphere_area(dim: int) -> float:
    """(dim-1)-dimensional volume of the unit sphere S^{dim-1} in R^dim."""
    return 2.0 * math.pi ** (dim / 2) / math.gamma(dim / 2)


def make_rng(seed: int, worker: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by a 64-bit seed; worker ``i`` uses ``seed ^ i``."""
    key = (int(seed) ^ int(worker)) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(np.random.Philox(key=key))


def angular_integral(g: Callable[[float], float], dim: int, breakpoints: Sequence[float] = ()) -> float:
    """Integral of ``g(|q.n|)`` over n in S^{dim-1}.

    Reduces to ``2 |S^{dim-2}| int_0^1 g(xi) (1-xi^2)^{(dim-3)/2} dxi`` and is evaluated
    with adaptive Gauss-Kronrod quadrature; the endpoint singularity at xi=1 (dim=2)
    is absorbed into an algebraic weight.
    """
    alpha = (dim - 3) / 2.0
    pts = sorted({0.0, 1.0, *(float(b) for b in breakpoints if 0.0 < b < 1.0)})
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b == 1.0 and alpha != 0.0:
            val, _ = integrate.quad(
                lambda x: float(g(x)) * (1.0 + x) ** alpha, a, 1.0,
                weight="alg", wvar=(0.0, alpha), epsabs=0.0, epsrel=1e-13, limit=200,
            )
        else:
            val, _ = integrate.quad(
                lambda x: float(g(x)) * (1.0 - x * x) ** alpha, a, b,
                epsabs=0.0, epsrel=1e-13, limit=200,
            )
        total += val
    return 2.0 * sphere_area(dim - 1) * total


def sample_sphere(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    z = rng.standard_normal((n, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z


# ---------------------------------------------------------------------------
# Maxwellian


@dataclass(frozen=True)
class Maxwellian:
    dim: int
    u0: tuple = None
    theta: float = 1.0

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dimension must be >= 2, got {self.dim}")
        if not self.theta > 0:
            raise ValueError(f"temperature must be positive, got {self.theta}")
        u0 = (0.0,) * self.dim if self.u0 is None else tuple(float(x) for x in self.u0)
        if len(u0) != self.dim:
            raise ValueError(f"bulk velocity has {len(u0)} components, expected {self.dim}")
        object.__setattr__(self, "u0", u0)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.u0)

    def logpdf(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        r2 = np.sum((v - self.center) ** 2, axis=-1)
        return -0.5 * self.dim * math.log(2 * math.pi * self.theta) - r2 / (2 * self.theta)

    def pdf(self, v) -> np.ndarray:
        return np.exp(self.logpdf(v))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.center + math.sqrt(self.theta) * rng.standard_normal((n, self.dim))

    def on_grid(self, spec: "GridSpec") -> "GridDensity":
        return GridDensity.from_function(self.pdf, spec)

    def rescaled(self, mu: float) -> "Maxwellian":
        """Maxwellian of ``mu^d M(mu v)``: temperature divided by mu^2."""
        return Maxwellian(self.dim, tuple(np.asarray(self.u0) / mu), self.theta / mu ** 2)


def maxwellian_eval(M: Maxwellian, v) -> np.ndarray:
    return M.pdf(v)


def sample_maxwellian(M: Maxwellian, rng_seed: int, n: int) -> "ParticleEnsemble":
    if n < 1:
        raise ValueError("need at least one particle")
    return ParticleEnsemble(M.sample(n, make_rng(rng_seed)), seed=rng_seed)


# ---------------------------------------------------------------------------
# Collision geometry


def post_collision(v, vstar, n):
    """Velocities after the elastic exchange ``v' = v - ((v-v*).n) n``, ``v*' = v* + ((v-v*).n) n``."""
    v = np.asarray(v, dtype=float)
    vstar = np.asarray(vstar, dtype=float)
    n = np.asarray(n, dtype=float)
    norms = np.linalg.norm(n, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ValueError("collision direction n must be a unit vector")
    t = np.sum((v - vstar) * n, axis=-1)[..., None]
    return v - t * n, vstar + t * n


# ---------------------------------------------------------------------------
# Angular parts and collision kernels


@dataclass(frozen=True)
class AngularPart:
    """Angular factor b(xi) on [0, 1].

    ``kind`` is ``"cutoff"`` for integrable b, or ``"minorant"`` when b is a
    cut-off lower bound standing in for a non-integrable kernel.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    sup: float
    label: str
    breakpoints: tuple = ()
    small_xi_exponent: float = 0.0
    kind: str = "cutoff"
    power: Optional[tuple] = None  # (scale, exponent, cutoff) for b = scale*xi^exponent*1[xi<=cutoff]

    def __post_init__(self):
        if self.kind not in ("cutoff", "minorant"):
            raise ValueError(f"unknown angular kind {self.kind!r}")
        xs = np.linspace(0.0, 1.0, 1001)
        vals = self(xs)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError(f"angular part {self.label} must be finite and nonnegative on [0,1]")

    def __call__(self, xi) -> np.ndarray:
        return np.asarray(self.evaluator(np.asarray(xi, dtype=float)), dtype=float)

    @classmethod
    def power_law(cls, exponent: float, scale: float = 1.0, cutoff: float = 1.0,
                  label: Optional[str] = None, kind: str = "cutoff") -> "AngularPart":
        if not 0.0 < cutoff <= 1.0:
            raise ValueError("cutoff must lie in (0, 1]")
        if exponent < 0:
            raise ValueError("negative exponents are not integrable; pass a cut-off minorant instead")

        def b(xi, s=scale, k=exponent, c=cutoff):
            out = s * np.power(xi, k)
            return np.where(xi <= c, out, 0.0) if c < 1.0 else out

        sup = scale * cutoff ** exponent
        bps = (cutoff,) if cutoff < 1.0 else ()
        return cls(b, sup, label or f"{scale:.12g}*xi^{exponent:g}" + (f"*1[xi<={cutoff:g}]" if cutoff < 1 else ""),
                   bps, float(exponent), kind, (scale, float(exponent), cutoff))

    @classmethod
    def minorant(cls, b: Callable, cap: float, label: str) -> "AngularPart":
        """Cut-off lower bound ``min(b, cap)`` of a non-integrable angular kernel."""
        return cls(lambda xi: np.minimum(b(xi), cap), cap, f"min({label},{cap:g})", kind="minorant")

    def scaled(self, factor: float) -> "AngularPart":
        power = None if self.power is None else (self.power[0] * factor, *self.power[1:])
        ev = self.evaluator
        return replace(self, evaluator=lambda xi: factor * ev(xi), sup=self.sup * factor,
                       label=f"{factor:.12g}*({self.label})", power=power)

    def mass(self, dim: int) -> float:
        return angular_integral(lambda x: float(self(x)), dim, self.breakpoints)

    def second_moment(self, dim: int) -> float:
        return angular_integral(lambda x: x * x * float(self(x)), dim, self.breakpoints)


def normalization_constant(dim: int) -> float:
    """c_d such that c_d * xi^{d-2} has unit mass on the sphere."""
    return 1.0 / angular_integral(lambda x: x ** (dim - 2), dim)


@dataclass(frozen=True)
class CollisionKernel:
    """Factored kernel ``B(|q|, xi) = beta_scale * |q|^gamma * b(xi)``.

    ``variant`` is informational (``maxwellian``, ``hard_potential``, ``grazing``);
    ``epsilon`` is set for grazing kernels.
    """

    dim: int
    angular: AngularPart
    gamma: float = 0.0
    beta_scale: float = 1.0
    variant: str = "maxwellian"
    epsilon: Optional[float] = None
    name: str = ""
    angular_mass: float = field(init=False)
    c_d: float = field(init=False)

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dimension must be >= 2")
        if self.gamma < 0:
            raise ValueError("hard-potential exponent gamma must be >= 0")
        if self.beta_scale <= 0:
            raise ValueError("beta_scale must be positive")
        if self.variant not in ("maxwellian", "hard_potential", "grazing"):
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        mass = self.angular.mass(self.dim)
        if not math.isfinite(mass):
            raise ValueError("angular part violates the cut-off assumption (infinite mass)")
        object.__setattr__(self, "angular_mass", mass)
        object.__setattr__(self, "c_d", normalization_constant(self.dim))
        if not self.name:
            object.__setattr__(self, "name", self._default_name())
        rs = np.linspace(0.0, 20.0, 401)
        if np.any(np.diff(self.beta(rs)) < -1e-14):
            raise ValueError("beta must be nondecreasing (hard potentials)")

    def _default_name(self) -> str:
        if self.variant == "grazing":
            return f"grazing(eps={self.epsilon:g},gamma={self.gamma:g},d={self.dim})"
        return f"{self.variant}(gamma={self.gamma:g},b={self.angular.label},d={self.dim})"

    # -- evaluation ---------------------------------------------------------
    def beta(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.gamma == 0.0:
            return np.full_like(r, self.beta_scale)
        return self.beta_scale * np.power(r, self.gamma)

    def __call__(self, qnorm, xi) -> np.ndarray:
        return self.beta(qnorm) * self.angular(xi)

    @property
    def is_maxwellian(self) -> bool:
        return self.gamma == 0.0

    @property
    def is_normalized(self) -> bool:
        return abs(self.angular_mass - 1.0) <= 1e-10

    @property
    def kernel_id(self) -> str:
        return self.name

    @property
    def delta_epsilon(self) -> float:
        if self.epsilon is None:
            raise ValueError("delta_epsilon is defined for grazing kernels only")
        return math.sqrt(1.0 - self.epsilon ** 2) / self.epsilon

    def gamma_b(self) -> float:
        return gamma_b(self)

    # -- derived kernels ----------------------------------------------------
    def normalized(self) -> "CollisionKernel":
        return replace(self, angular=self.angular.scaled(1.0 / self.angular_mass), name="")

    def scaled(self, factor: float) -> "CollisionKernel":
        """Kernel ``factor * B``."""
        return replace(self, beta_scale=self.beta_scale * factor, name=f"{factor:g}*{self.name}")

    def maxwellian_part(self) -> "CollisionKernel":
        """The kernel ``b(xi)`` obtained by dropping the |q| dependence."""
        return replace(self, gamma=0.0, beta_scale=1.0, variant="maxwellian", name="")

    # -- presets --------------------------------------------------------------
    @classmethod
    def maxwell_molecules(cls, dim: int = 3) -> "CollisionKernel":
        """Normalized ``c_d xi^{d-2}`` (Maxwell molecules in d=3)."""
        cd = normalization_constant(dim)
        return cls(dim, AngularPart.power_law(dim - 2, cd, label=f"c_{dim}*xi^{dim - 2}"),
                   name=f"maxwell-d{dim}")

    @classmethod
    def hard_potential(cls, gamma: float, dim: int = 3) -> "CollisionKernel":
        """``c_d |q|^gamma xi^{d-2}``; gamma=1, d=3 is hard spheres."""
        cd = normalization_constant(dim)
        name = "hard-spheres-d3" if (dim == 3 and gamma == 1.0) else f"hard-potential(gamma={gamma:g},d={dim})"
        return cls(dim, AngularPart.power_law(dim - 2, cd, label=f"c_{dim}*xi^{dim - 2}"),
                   gamma=float(gamma), variant="hard_potential", name=name)

    @classmethod
    def grazing(cls, epsilon: float, gamma: float = 0.0, dim: int = 3) -> "CollisionKernel":
        """``|q|^gamma xi 1[xi<=eps] / ||b_eps||`` (normalized angular part)."""
        if not 0.0 < epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        if gamma not in (0, 1):
            raise ValueError("grazing kernels are defined for gamma in {0, 1}")
        norm = angular_integral(lambda x: x if x <= epsilon else 0.0, dim, (epsilon,))
        ang = AngularPart.power_law(1.0, 1.0 / norm, cutoff=epsilon, label=f"xi*1[xi<={epsilon:g}]/|b_eps|")
        return cls(dim, ang, gamma=float(gamma), variant="grazing", epsilon=float(epsilon),
                   name=f"grazing(eps={epsilon:g},gamma={int(gamma)},d={dim})")

    @classmethod
    def maxwellian(cls, angular: AngularPart, dim: int = 3, normalize: bool = True) -> "CollisionKernel":
        k = cls(dim, angular)
        return k.normalized() if normalize else k


def gamma_b(kernel: CollisionKernel) -> float:
    """Second angular moment ``int (q.n)^2 b(q.n) dn`` of a normalized kernel."""
    if not kernel.is_normalized:
        raise ValueError(
            f"gamma_b needs a normalized angular part (mass {kernel.angular_mass:.6g}); "
            "call kernel.normalized() first"
        )
    return kernel.angular.second_moment(kernel.dim)


# ---------------------------------------------------------------------------
# Densities


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box ``[c - half_width, c + half_width]^d`` with ``n`` cells per axis."""

    dim: int
    center: tuple
    half_width: float
    n: int

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != self.dim:
            raise ValueError("grid center has wrong dimension")
        if self.n < 2 or self.half_width <= 0:
            raise ValueError("grid needs n >= 2 and a positive half width")

    @classmethod
    def default(cls, M: Maxwellian, n: Optional[int] = None, L: float = 6.0) -> "GridSpec":
        if n is None:
            n = {2: 64, 3: 48}.get(M.dim, 16)
        return cls(M.dim, M.u0, L * math.sqrt(M.theta), n)

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n ** self.dim

    def axis(self, k: int) -> np.ndarray:
        return self.center[k] - self.half_width + self.h * (np.arange(self.n) + 0.5)

    def points(self) -> np.ndarray:
        """Cell centers, shape (n^d, d), C order."""
        mesh = np.meshgrid(*[self.axis(k) for k in range(self.dim)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def grid_id(self) -> str:
        key = f"{self.dim}|{self.center}|{self.half_width!r}|{self.n}"
        return hashlib.sha1(key.encode()).hexdigest()[:16]

    def cell_index(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flat cell index of each point and a mask of points inside the box."""
        v = np.atleast_2d(np.asarray(v, dtype=float))
        idx = np.floor((v - (np.asarray(self.center) - self.half_width)) / self.h).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < self.n), axis=1)
        idx = np.clip(idx, 0, self.n - 1)
        flat = np.ravel_multi_index(tuple(idx.T), self.shape)
        return flat, inside


@dataclass(frozen=True)
class GridDensity:
    """Piecewise-constant density on a :class:`GridSpec`."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(self.spec.shape)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("grid density values must be finite and nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, fn: Callable, spec: GridSpec, normalize: bool = True) -> "GridDensity":
        vals = np.asarray(fn(spec.points()), dtype=float).reshape(spec.shape)
        g = cls(spec, vals)
        return g.renormalized() if normalize else g

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def mass(self) -> float:
        return float(self.values.sum() * self.spec.cell_volume)

    def renormalized(self) -> "GridDensity":
        m = self.mass()
        if m <= 0:
            raise ValueError("cannot renormalize a density with zero mass")
        return GridDensity(self.spec, self.values / m)

    def evaluate(self, v) -> np.ndarray:
        flat, inside = self.spec.cell_index(v)
        return np.where(inside, self.flat[flat], 0.0)

    def logpdf(self, v) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.evaluate(v))

    def pdf(self, v) -> np.ndarray:
        return self.evaluate(v)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        p = self.flat / self.flat.sum()
        cells = rng.choice(p.size, size=n, p=p)
        idx = np.stack(np.unravel_index(cells, self.spec.shape), axis=1)
        lo = np.asarray(self.spec.center) - self.spec.half_width
        return lo + self.spec.h * (idx + rng.random((n, self.dim)))

    def second_moment(self, u0) -> float:
        r2 = np.sum((self.spec.points() - np.asarray(u0)) ** 2, axis=1)
        return float(np.sum(r2 * self.flat) * self.spec.cell_volume)


@dataclass(frozen=True)
class ParticleEnsemble:
    velocities: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        v = np.array(self.velocities, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError("ensemble needs shape (N, d) with N >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("ensemble contains non-finite velocities")
        v.setflags(write=False)
        object.__setattr__(self, "velocities", v)

    @property
    def n(self) -> int:
        return self.velocities.shape[0]

    @property
    def dim(self) -> int:
        return self.velocities.shape[1]

    def histogram(self, spec: GridSpec) -> tuple[np.ndarray, int]:
        """Cell counts on ``spec`` and the number of particles falling outside it."""
        flat, inside = spec.cell_index(self.velocities)
        counts = np.bincount(flat[inside], minlength=spec.size)
        return counts, int((~inside).sum())


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of isotropic Gaussians ``sum_k w_k N(m_k, s_k I)``; exact pdf and sampling."""

    weights: tuple
    means: tuple
    variances: tuple
    label: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to one")
        if np.any(np.asarray(self.variances, dtype=float) <= 0):
            raise ValueError("mixture variances must be positive")
        object.__setattr__(self, "weights", tuple(map(float, w)))
        object.__setattr__(self, "means", tuple(tuple(map(float, m)) for m in self.means))
        object.__setattr__(self, "variances", tuple(map(float, self.variances)))
        if len({len(m) for m in self.means}) != 1 or len(self.means) != len(w) or len(self.variances) != len(w):
            raise ValueError("inconsistent mixture component shapes")

    @classmethod
    def gaussian(cls, mean, variance: float, label: str = "") -> "GaussianMixture":
        return cls((1.0,), (tuple(mean),), (variance,), label)

    @property
    def dim(self) -> int:
        return len(self.means[0])

    def logpdf(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        d = self.dim
        comps = []
        for w, m, s in zip(self.weights, self.means, self.variances):
            r2 = np.sum((v - np.asarray(m)) ** 2, axis=-1)
            comps.append(math.log(w) - 0.5 * d * math.log(2 * math.pi * s) - r2 / (2 * s))
        if len(comps) == 1:
            return comps[0]
        return special.logsumexp(np.stack(comps), axis=0)

    def pdf(self, v) -> np.ndarray:
        return np.exp(self.logpdf(v))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        k = len(self.weights)
        comp = rng.choice(k, size=n, p=self.weights) if k > 1 else np.zeros(n, dtype=np.int64)
        means = np.asarray(self.means)[comp]
        sd = np.sqrt(np.asarray(self.variances))[comp][:, None]
        return means + sd * rng.standard_normal((n, self.dim))

    def rescaled(self, mu: float) -> "GaussianMixture":
        """Density ``mu^d f(mu v)``."""
        return GaussianMixture(self.weights, tuple(tuple(np.asarray(m) / mu) for m in self.means),
                               tuple(s / mu ** 2 for s in self.variances), f"{self.label}@mu={mu:g}")

    def on_grid(self, spec: GridSpec) -> GridDensity:
        return GridDensity.from_function(self.pdf, spec)
