"""Carleman kernel k_B(v', v), collision frequency, tabulated gain operator and kernel comparison."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .core import CollisionKernel, GridDensity, GridSpec, Maxwellian, make_rng, sphere_area

DEFAULT_ORDER = 32
GAUSS_WIDTH = 10.0  # hyperplane integrals are truncated at |rho - rho_bar| <= GAUSS_WIDTH*sqrt(theta)
CACHE_MAGIC = b"LBKTENS1"
MEMORY_BUDGET_ENV = "LINBOLTZ_MEMORY_MB"
DEFAULT_MEMORY_MB = 2048


def angular_gauss_avg(dim: int, a, r, theta: float) -> np.ndarray:
    """``int_{S^{dim-1}} exp(-|a e + r m|^2 / (2 theta)) dm`` for a fixed unit vector e.

    Equals ``|S^{dim-1}| Gamma(nu+1) (2/x)^nu I_nu(x) exp(-(a^2+r^2)/(2 theta))`` with
    ``nu = dim/2 - 1`` and ``x = a r / theta``; evaluated with exponentially scaled Bessel
    functions so nothing overflows.
    """
    a = np.asarray(a, dtype=float)
    r = np.asarray(r, dtype=float)
    if dim == 1:
        return np.exp(-((a - r) ** 2) / (2 * theta)) + np.exp(-((a + r) ** 2) / (2 * theta))
    x = a * r / theta
    base = np.exp(-((a - r) ** 2) / (2 * theta))
    if dim == 2:
        return 2 * math.pi * special.i0e(x) * base
    nu = dim / 2 - 1
    small = x < 1e-3
    xs = np.where(small, 1.0, x)
    big = math.gamma(nu + 1) * (2.0 / xs) ** nu * special.ive(nu, xs)
    series = (1 + x * x / (4 * (nu + 1)) + x ** 4 / (32 * (nu + 1) * (nu + 2))) * np.exp(-x)
    return sphere_area(dim) * np.where(small, series, big) * base


# ---------------------------------------------------------------------------
# Hyperplane integral


def _gauss_legendre(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def hyperplane_integral(kernel: CollisionKernel, theta: float, s, rhobar,
                        order: int = DEFAULT_ORDER) -> np.ndarray:
    """``G(s, rho_bar) = int_{R^{d-1}} B(sqrt(s^2+|y|^2), s/sqrt(s^2+|y|^2)) exp(-|vbar+y|^2/(2 theta)) dy``.

    The integrand depends on y only through |y| and the angle to vbar, so the angular
    part is done in closed form and the radial part by composite Gauss-Legendre in
    ``u = asinh(|y|/s)`` on panels split at rho_bar and at the angular breakpoints.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    rb = np.atleast_1d(np.asarray(rhobar, dtype=float))
    s, rb = np.broadcast_arrays(s, rb)
    shape = s.shape
    s = s.ravel()
    rb = rb.ravel()
    if np.any(s <= 0):
        raise ValueError("hyperplane integral needs s > 0; use the s -> 0 limit for the diagonal")
    m = kernel.dim - 1
    width = GAUSS_WIDTH * math.sqrt(theta)
    lo = np.maximum(rb - width, 0.0)
    hi = rb + width
    edges = [lo, rb, hi]
    for xi_k in kernel.angular.breakpoints:
        rk = s * math.sqrt(1.0 / xi_k ** 2 - 1.0)
        edges.append(np.clip(rk, lo, hi))
    E = np.sort(np.stack(edges, axis=1), axis=1)
    U = np.arcsinh(E / s[:, None])
    x, w = _gauss_legendre(order)
    total = np.zeros_like(s)
    for p in range(U.shape[1] - 1):
        ua = U[:, p:p + 1]
        ub = U[:, p + 1:p + 2]
        half = 0.5 * (ub - ua)
        u = 0.5 * (ua + ub) + half * x
        ch = np.cosh(u)
        rho = s[:, None] * np.sinh(u)
        q = s[:, None] * ch
        f = kernel.beta(q) * kernel.angular(1.0 / ch) * angular_gauss_avg(m, rb[:, None], rho, theta)
        if m > 1:
            f = f * rho ** (m - 1)
        total += (f * q * half) @ w
    return total.reshape(shape)


def _frame(Mx: Maxwellian, vprime, v):
    """Separation s, squared target coordinate r^2 along v-v', and rho_bar for each pair."""
    v = np.asarray(v, dtype=float)
    vp = np.asarray(vprime, dtype=float)
    diff = v - vp
    s = np.linalg.norm(diff, axis=-1)
    if np.any(s == 0):
        raise ValueError("Carleman kernel is undefined on the diagonal v = v'")
    n = diff / s[..., None]
    a = v - Mx.center
    r = np.sum(a * n, axis=-1)
    rb2 = np.maximum(np.sum(a * a, axis=-1) - r * r, 0.0)
    return s, r, np.sqrt(rb2)


def carleman_kernel(kernel: CollisionKernel, M: Maxwellian, vprime, v,
                    order: int = DEFAULT_ORDER) -> np.ndarray:
    """Jump rate density ``k_B(v', v)`` from the pre-collisional velocity v' to v.

    ``k_B(v', v) = 2 |v-v'|^{1-d} int_{E_{v,v'}} B(|q|, xi) M(v'_*) dv'_*`` over the hyperplane
    through v orthogonal to v - v'. Vectorized over leading axes.
    """
    if kernel.dim != M.dim:
        raise ValueError("kernel and Maxwellian dimensions differ")
    s, r, rb = _frame(M, vprime, v)
    d = M.dim
    G = hyperplane_integral(kernel, M.theta, s, rb, order)
    return 2.0 * s ** (1 - d) * (2 * math.pi * M.theta) ** (-d / 2) * np.exp(-r * r / (2 * M.theta)) * G


def collision_frequency(kernel: CollisionKernel, M: Maxwellian, v) -> np.ndarray:
    """``sigma_B(v) = int int B M(v_*) dn dv_*`` by adaptive radial quadrature.

    Uses ``sigma(v) = |b| (2 pi theta)^{-d/2} int_0^inf beta(r) r^{d-1} G_d(|v-u0|, r) dr``
    and evaluates the integral once per distinct |v - u0|.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    a = np.linalg.norm(v - M.center, axis=1)
    if kernel.gamma == 0.0:
        return np.full(a.shape, kernel.angular_mass * kernel.beta_scale)
    d = kernel.dim
    th = M.theta
    keys, inv = np.unique(np.round(a, 12), return_inverse=True)
    out = np.empty(keys.shape)
    width = GAUSS_WIDTH * math.sqrt(th)
    for k, ak in enumerate(keys):
        lo, hi = max(ak - width, 0.0), ak + width

        def g(r):
            return float(kernel.beta(r)) * r ** (d - 1) * float(angular_gauss_avg(d, ak, r, th))

        pts = [ak] if lo < ak < hi else None
        val, _ = integrate.quad(g, lo, hi, points=pts, epsabs=0.0, epsrel=1e-12, limit=200)
        out[k] = val
    return kernel.angular_mass * (2 * math.pi * th) ** (-d / 2) * out[inv]


def carleman_row_integral(kernel: CollisionKernel, M: Maxwellian, v, radius: float = math.inf,
                          order: int = 48, inner_order: int = DEFAULT_ORDER) -> float:
    """``int k_B(v, w) dw`` over targets w with |w - v| < radius, by polar quadrature around v.

    With ``w = v + s n`` the integrand ``s^{d-1} k_B(v, w)`` is bounded at s = 0, and by symmetry
    about the axis v - u0 it depends on n only through ``t = n . (v-u0)/|v-u0|``.
    """
    v = np.asarray(v, dtype=float)
    d = M.dim
    a_vec = v - M.center
    a = float(np.linalg.norm(a_vec))
    th = M.theta
    smax = min(radius, a + GAUSS_WIDTH * math.sqrt(th) + 2.0)
    x, w = _gauss_legendre(order)
    # t in [-1, 1] with weight (1 - t^2)^{(d-3)/2}: Gauss-Jacobi handles the endpoint factor
    tj, wt = special.roots_jacobi(order, (d - 3) / 2, (d - 3) / 2)
    # s on [0, smax], split at the point where the Gaussian along n peaks
    total = 0.0
    splits = sorted({0.0, min(a, smax), smax})
    for s0, s1 in zip(splits[:-1], splits[1:]):
        if s1 <= s0:
            continue
        sj = 0.5 * (s0 + s1) + 0.5 * (s1 - s0) * x
        ws = 0.5 * (s1 - s0) * w
        S, T = np.meshgrid(sj, tj, indexing="ij")
        r = a * T + S
        rb = a * np.sqrt(np.maximum(1 - T * T, 0.0))
        G = hyperplane_integral(kernel, th, S, rb, inner_order)
        vals = 2.0 * (2 * math.pi * th) ** (-d / 2) * np.exp(-r * r / (2 * th)) * G
        total += ws @ vals @ wt
    return sphere_area(d - 1) * total


def detailed_balance_residual(kernel: CollisionKernel, M: Maxwellian, n_pairs: int = 1000,
                              seed: int = 0, scale: float = 3.0, order: int = DEFAULT_ORDER) -> float:
    """Max relative residual ``|M(v)k(v,w) - M(w)k(w,v)| / max(...)`` over random pairs."""
    rng = make_rng(seed)
    v = M.center + scale * math.sqrt(M.theta) * rng.uniform(-1, 1, (n_pairs, M.dim))
    w = M.center + scale * math.sqrt(M.theta) * rng.uniform(-1, 1, (n_pairs, M.dim))
    lhs = M.pdf(v) * carleman_kernel(kernel, M, v, w, order)
    rhs = M.pdf(w) * carleman_kernel(kernel, M, w, v, order)
    den = np.maximum(np.maximum(lhs, rhs), 1e-300)
    return float(np.max(np.abs(lhs - rhs) / den))


# ---------------------------------------------------------------------------
# Tabulated kernel


def _memory_budget_bytes() -> int:
    return int(float(os.environ.get(MEMORY_BUDGET_ENV, DEFAULT_MEMORY_MB)) * 2 ** 20)


def _pair_keys(spec: GridSpec, u0: np.ndarray, iu: np.ndarray, ju: np.ndarray, pts: np.ndarray):
    """Exact integer keys (|k|^2, |p x k|^2) for lattices symmetric about u0, else None."""
    c = (pts - u0) / (0.5 * spec.h)
    ci = np.rint(c)
    if np.max(np.abs(c - ci)) > 1e-9:
        return None
    P = ci.astype(np.int64)
    K = (P[ju] - P[iu]) // 2
    s2 = np.sum(K * K, axis=1)
    pk = np.sum(P[iu] * K, axis=1)
    cross2 = np.sum(P[iu] ** 2, axis=1) * s2 - pk * pk
    return s2, cross2


@dataclass(frozen=True)
class KernelTensor:
    """Dense table ``T[i, j] = k_B(v_i, v_j)`` (rate from cell i to cell j), zero diagonal.

    ``sigma`` comes from independent quadrature. ``self_rate = sigma - h^d sum_j T[i, j]`` is the
    rate that stays within cell i, so the discrete gain conserves ``int sigma f`` and the
    generator ``gain - sigma f`` conserves mass and fixes the projected Maxwellian exactly.
    """

    spec: GridSpec
    kernel_id: str
    order: int
    theta: float
    u0: tuple
    table: np.ndarray
    sigma: np.ndarray
    self_rate: np.ndarray

    def __post_init__(self):
        for arr in (self.table, self.sigma, self.self_rate):
            arr.setflags(write=False)

    @property
    def maxwellian(self) -> Maxwellian:
        return Maxwellian(self.spec.dim, self.u0, self.theta)

    @property
    def row_sums(self) -> np.ndarray:
        return self.spec.cell_volume * self.table.sum(axis=1)

    def _check(self, f: GridDensity):
        if f.spec != self.spec:
            raise ValueError("density and kernel tensor live on different grids")

    def gain_values(self, values: np.ndarray) -> np.ndarray:
        x = np.asarray(values, dtype=float).ravel()
        return self.spec.cell_volume * (self.table.T @ x) + self.self_rate * x

    def gain_apply(self, f: GridDensity) -> GridDensity:
        """Gain term ``L_+ f(v) = int k_B(w, v) f(w) dw`` on the grid (not renormalized)."""
        self._check(f)
        g = self.gain_values(f.flat)
        if np.any(g < -1e-14 * np.max(np.abs(g))):
            raise ValueError("gain produced negative values; the tensor self rates are inconsistent")
        return GridDensity(f.spec, np.maximum(g, 0.0))

    def generator_values(self, values: np.ndarray) -> np.ndarray:
        x = np.asarray(values, dtype=float).ravel()
        return self.gain_values(x) - self.sigma * x

    def dissipation_sum(self, g: np.ndarray, psi) -> float:
        """``1/2 h^{2d} sum_ij M_i T_ij psi(g_i, g_j)`` for a ratio vector g = f/M."""
        Mv = self.maxwellian.pdf(self.spec.points())
        g = np.asarray(g, dtype=float).ravel()
        hv = self.spec.cell_volume
        total = 0.0
        for i0 in range(0, g.size, 512):
            i1 = min(i0 + 512, g.size)
            P = psi(g[i0:i1, None], g[None, :])
            total += float(np.sum(Mv[i0:i1, None] * self.table[i0:i1] * P))
        return 0.5 * hv * hv * total

    def save(self, path) -> Path:
        path = Path(path)
        header = {
            "kernel_id": self.kernel_id, "grid_id": self.spec.grid_id, "order": self.order,
            "theta": self.theta, "u0": list(self.u0), "dim": self.spec.dim, "n": self.spec.n,
            "center": list(self.spec.center), "half_width": self.spec.half_width,
        }
        hb = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(np.uint64(len(hb)).astype("<u8").tobytes())
            fh.write(hb)
            for arr in (self.table, self.sigma, self.self_rate):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return path

    @classmethod
    def load(cls, path) -> "KernelTensor":
        with open(path, "rb") as fh:
            if fh.read(len(CACHE_MAGIC)) != CACHE_MAGIC:
                raise ValueError(f"{path} is not a kernel tensor cache file")
            hlen = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
            header = json.loads(fh.read(hlen))
            spec = GridSpec(header["dim"], tuple(header["center"]), header["half_width"], header["n"])
            if spec.grid_id != header["grid_id"]:
                raise ValueError("cache header grid hash does not match its grid parameters")
            N = spec.size
            table = np.frombuffer(fh.read(8 * N * N), dtype="<f8").reshape(N, N).copy()
            sigma = np.frombuffer(fh.read(8 * N), dtype="<f8").copy()
            self_rate = np.frombuffer(fh.read(8 * N), dtype="<f8").copy()
        return cls(spec, header["kernel_id"], header["order"], header["theta"], tuple(header["u0"]),
                   table, sigma, self_rate)


def _self_cell(kernel, M, spec: GridSpec, centers: np.ndarray, order: int) -> np.ndarray:
    """Polar quadrature of the self-cell integral around each cell center.

    In polar form ``w = v + s n`` the integrand ``s^{d-1} k`` is bounded, and the radial
    extent to the cell boundary is ``R(n) = (h/2) / max_k |n_k|``.
    """
    d = spec.dim
    th = M.theta
    h = spec.h
    xg, wg = _gauss_legendre(order)
    if d == 2:
        # 8 symmetric octants would need the axis alignment of a; integrate the full circle
        phi = np.pi * (xg + 1)
        wphi = np.pi * wg
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        wdir = wphi
    elif d == 3:
        tz, wz = xg, wg
        phi = np.pi * (xg + 1)
        wphi = np.pi * wg
        TZ, PH = np.meshgrid(tz, phi, indexing="ij")
        st = np.sqrt(1 - TZ ** 2)
        dirs = np.stack([st * np.cos(PH), st * np.sin(PH), TZ], axis=-1).reshape(-1, 3)
        wdir = np.outer(wz, wphi).ravel()
    else:
        raise ValueError("self-cell quadrature is implemented for d = 2, 3")
    R = 0.5 * h / np.max(np.abs(dirs), axis=1)
    out = np.empty(len(centers))
    for c, v in enumerate(centers):
        a = v - M.center
        sj = 0.5 * (xg[None, :] + 1) * R[:, None]  # (ndir, order)
        ws = 0.5 * wg[None, :] * R[:, None]
        r = (dirs @ a)[:, None] + sj
        rb2 = np.maximum(a @ a - (dirs @ a) ** 2, 0.0)
        rb = np.broadcast_to(np.sqrt(rb2)[:, None], sj.shape)
        G = hyperplane_integral(kernel, th, sj, rb)
        vals = 2.0 * (2 * math.pi * th) ** (-d / 2) * np.exp(-r * r / (2 * th)) * G
        out[c] = np.sum(wdir[:, None] * ws * vals)
    return out


def tensor_cache_path(cache_dir, kernel: CollisionKernel, M: Maxwellian, spec: GridSpec, order: int,
                      near_field: int = 2) -> Path:
    key = f"{kernel.kernel_id}|{spec.grid_id}|{order}|{M.theta!r}|{M.u0}|nf{near_field}"
    return Path(cache_dir) / f"ktensor-{hashlib.sha1(key.encode()).hexdigest()[:20]}.bin"


def precompute_kernel(kernel: CollisionKernel, M: Maxwellian, spec: GridSpec,
                      order: int = DEFAULT_ORDER, cache_dir=None, chunk: int = 200_000,
                      near_field: int = 2) -> KernelTensor:
    """Tabulate ``k_B`` between all grid cell centers (plus sigma and self rates).

    Refuses grids whose tensor would exceed the memory budget (env ``LINBOLTZ_MEMORY_MB``).
    With ``cache_dir`` the tensor is loaded from or written to a binary cache keyed by
    (kernel id, grid id, quadrature order). Entries within ``near_field`` cells of the
    diagonal are target-cell averages rather than point values, symmetrized in the M weight.
    """
    if kernel.dim != M.dim or spec.dim != M.dim:
        raise ValueError("kernel, Maxwellian and grid dimensions differ")
    if spec.dim == 3 and spec.n > 32:
        raise ValueError("d = 3 tensors are limited to n <= 32 cells per axis")
    N = spec.size
    need = 3 * 8 * N * N
    budget = _memory_budget_bytes()
    if need > budget:
        raise MemoryError(
            f"kernel tensor for {N} cells needs about {need / 2 ** 20:.0f} MiB "
            f"(budget {budget / 2 ** 20:.0f} MiB); reduce n or raise {MEMORY_BUDGET_ENV}"
        )
    path = None
    if cache_dir is not None:
        path = tensor_cache_path(cache_dir, kernel, M, spec, order, near_field)
        if path.exists():
            kt = KernelTensor.load(path)
            if kt.kernel_id == kernel.kernel_id and kt.order == order and kt.spec == spec:
                return kt

    pts = spec.points()
    th = M.theta
    d = spec.dim
    iu, ju = np.triu_indices(N, 1)
    keys = _pair_keys(spec, M.center, iu, ju, pts)
    diff = pts[ju] - pts[iu]
    s = np.linalg.norm(diff, axis=1)
    nvec = diff / s[:, None]
    a_i = pts[iu] - M.center
    a_j = pts[ju] - M.center
    r_i = np.sum(a_i * nvec, axis=1)
    r_j = np.sum(a_j * nvec, axis=1)
    del nvec, diff, a_j
    if keys is not None:
        key = keys[0].astype(np.int64) * (int(keys[1].max()) + 1) + keys[1]
        uniq, first, inv = np.unique(key, return_index=True, return_inverse=True)
        rb_u = np.sqrt(np.maximum(np.sum(a_i[first] ** 2, axis=1) - r_i[first] ** 2, 0.0))
        s_u = s[first]
    else:
        inv = None
        s_u = s
        rb_u = np.sqrt(np.maximum(np.sum(a_i ** 2, axis=1) - r_i ** 2, 0.0))
    del a_i
    G_u = np.empty_like(s_u)
    for c0 in range(0, len(s_u), chunk):
        c1 = min(c0 + chunk, len(s_u))
        G_u[c0:c1] = hyperplane_integral(kernel, th, s_u[c0:c1], rb_u[c0:c1], order)
    G = G_u[inv] if inv is not None else G_u
    pref = 2.0 * s ** (1 - d) * (2 * math.pi * th) ** (-d / 2) * G
    table = np.zeros((N, N))
    table[iu, ju] = pref * np.exp(-r_j ** 2 / (2 * th))  # source i, target j
    table[ju, iu] = pref * np.exp(-r_i ** 2 / (2 * th))  # source j, target i
    del pref, G, iu, ju
    if near_field > 0:
        _average_near_field(kernel, M, spec, table, near_field, order)
    sigma = collision_frequency(kernel, M, pts)
    self_rate = sigma - spec.cell_volume * table.sum(axis=1)
    kt = KernelTensor(spec, kernel.kernel_id, order, th, M.u0, table, sigma, self_rate)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        kt.save(path)
    return kt


def _average_near_field(kernel, M, spec: GridSpec, table: np.ndarray, K: int, order: int, q: int = 4):
    """Replace ``T[i, j]`` for cells within K of each other by the mean of k(v_i, .) over cell j.

    The 1/s^{d-1} singularity makes point values of neighbouring cells inaccurate. The
    averaged entries are then symmetrized as ``(M_i c_ij + M_j c_ji) / (2 M_i)`` so that
    detailed balance stays exact.
    """
    d, n, h = spec.dim, spec.n, spec.h
    gx, gw = _gauss_legendre(q)
    sub = np.stack(np.meshgrid(*([0.5 * h * gx] * d), indexing="ij"), axis=-1).reshape(-1, d)
    sw = np.prod(np.stack(np.meshgrid(*([0.5 * gw] * d), indexing="ij"), axis=-1).reshape(-1, d), axis=1)
    pts = spec.points()
    grid_idx = np.stack(np.unravel_index(np.arange(spec.size), spec.shape), axis=1)
    rows, cols, vals = [], [], []
    rng_k = range(-K, K + 1)
    for off in np.array(np.meshgrid(*([list(rng_k)] * d), indexing="ij")).reshape(d, -1).T:
        if not off.any():
            continue
        tgt = grid_idx + off
        ok = np.all((tgt >= 0) & (tgt < n), axis=1)
        i = np.flatnonzero(ok)
        j = np.ravel_multi_index(tuple(tgt[ok].T), spec.shape)
        w = pts[j][:, None, :] + sub[None, :, :]
        src = np.broadcast_to(pts[i][:, None, :], w.shape)
        kv = carleman_kernel(kernel, M, src, w, order)
        rows.append(i)
        cols.append(j)
        vals.append(kv @ sw)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    Mv = M.pdf(pts)
    order_idx = np.lexsort((cols, rows))
    r_s, c_s, v_s = rows[order_idx], cols[order_idx], vals[order_idx]
    pos = np.searchsorted(r_s * spec.size + c_s, cols * spec.size + rows)
    c_ji = v_s[pos]
    avg = 0.5 * (Mv[rows] * vals + Mv[cols] * c_ji) / Mv[rows]
    table[rows, cols] = avg


def row_sum_check(tensor: KernelTensor, kernel: CollisionKernel, interior: float = 4.0,
                  order: int = 16) -> dict:
    """Compare off-diagonal row sums plus the self-cell integral with sigma on interior cells."""
    M = tensor.maxwellian
    pts = tensor.spec.points()
    mask = np.linalg.norm(pts - M.center, axis=1) <= interior * math.sqrt(M.theta)
    idx = np.flatnonzero(mask)
    selfc = _self_cell(kernel, M, tensor.spec, pts[idx], order)
    est = tensor.row_sums[idx] + selfc
    rel = np.abs(est - tensor.sigma[idx]) / tensor.sigma[idx]
    return {"max_rel_error": float(rel.max()), "mean_rel_error": float(rel.mean()), "cells": int(idx.size)}


# ---------------------------------------------------------------------------
# Kernel comparison


def _small_s_ratio(B: CollisionKernel, theta: float, rhobar: float) -> float:
    """Limit s -> 0 of G_B / G_Btilde when b(xi) ~ xi^kappa near xi = 0."""
    m = B.dim - 1
    kappa = B.angular.small_xi_exponent
    expo = m - 1 - kappa
    if expo <= -1:
        raise ValueError("small-s limit diverges for this angular exponent")
    width = GAUSS_WIDTH * math.sqrt(theta)
    lo, hi = max(rhobar - width, 0.0), rhobar + width

    def w(r):
        return r ** expo * float(angular_gauss_avg(m, rhobar, r, theta))

    pts = [rhobar] if lo < rhobar < hi else None
    num, _ = integrate.quad(lambda r: float(B.beta(r)) / B.beta_scale * w(r), lo, hi, points=pts,
                            epsabs=0.0, epsrel=1e-11, limit=200)
    den, _ = integrate.quad(w, lo, hi, points=pts, epsabs=0.0, epsrel=1e-11, limit=200)
    return B.beta_scale * num / den


@dataclass(frozen=True)
class ComparisonResult:
    C_tilde: float
    C_theta: float
    argmin_s: float
    argmin_rhobar: float
    rho0: float
    beta_rho0: float


def comparison_constant(B: CollisionKernel, B_tilde: CollisionKernel, theta: float, rho0: float = 1.0,
                        n_s: int = 60, n_rhobar: int = 81, rhobar_max: float = 8.0,
                        order: int = DEFAULT_ORDER) -> ComparisonResult:
    """Infimum over (rho_bar, s) in [0, rhobar_max sqrt(theta)] x [0, rho0] of G_B / G_Btilde.

    ``B = beta(|q|) b(xi)`` and ``B_tilde = b(xi)`` must share the angular part. s runs on a
    log grid in (1e-3, rho0] plus the exact s = 0 limit.
    """
    if B.angular.label != B_tilde.angular.label or B.dim != B_tilde.dim:
        raise ValueError("comparison needs kernels with the same angular part and dimension")
    s_grid = np.geomspace(1e-3, rho0, n_s)
    rb_grid = np.linspace(0.0, rhobar_max * math.sqrt(theta), n_rhobar)
    S, R = np.meshgrid(s_grid, rb_grid, indexing="ij")
    num = hyperplane_integral(B, theta, S, R, order)
    den = hyperplane_integral(B_tilde, theta, S, R, order)
    ratio = num / den
    limit = np.array([_small_s_ratio(B, theta, rb) / B_tilde.beta_scale for rb in rb_grid])
    k = np.unravel_index(np.argmin(ratio), ratio.shape)
    best, arg_s, arg_rb = float(ratio[k]), float(S[k]), float(R[k])
    j = int(np.argmin(limit))
    if limit[j] < best:
        best, arg_s, arg_rb = float(limit[j]), 0.0, float(rb_grid[j])
    beta0 = float(B.beta(rho0)) / B_tilde.beta_scale
    return ComparisonResult(max(best, 0.0), min(beta0, max(best, 0.0)), arg_s, arg_rb, rho0, beta0)


def kernel_ratio_pairs(B: CollisionKernel, B_tilde: CollisionKernel, M: Maxwellian, n_pairs: int = 1000,
                       seed: int = 0, scale: float = 4.0, order: int = DEFAULT_ORDER) -> np.ndarray:
    """``k_B / k_Btilde`` at random velocity pairs in the box ``u0 +- scale sqrt(theta)``."""
    rng = make_rng(seed)
    v = M.center + scale * math.sqrt(M.theta) * rng.uniform(-1, 1, (n_pairs, M.dim))
    w = M.center + scale * math.sqrt(M.theta) * rng.uniform(-1, 1, (n_pairs, M.dim))
    return carleman_kernel(B, M, v, w, order) / carleman_kernel(B_tilde, M, v, w, order)
