"""Difference operators on product spaces and the exponential-moment bound for F."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .defaults import DEFAULTS, master_cap
from .entropy import B_CONST
from .kernels import adjoint_lam
from .models import MeanFieldKernel, _masses
from .space import (CompositionIndex, FiniteSpace, all_configs, as_tensor, double_swaps,
                    from_tensor, single_swaps, tensorize)


@dataclass
class PhiFunction:
    """Function of an atom and an empirical measure of ``N - 1`` particles, stored as a table.

    ``table[x, i]`` is the value at atom x and the i-th composition of ``index``.
    """

    space: FiniteSpace
    N: int
    table: np.ndarray
    index: CompositionIndex = field(repr=False)
    constant_C: float | None = None

    @classmethod
    def from_callable(cls, space: FiniteSpace, N: int, fn: Callable[[int, np.ndarray], float],
                      constant_C: float | None = None) -> "PhiFunction":
        idx = CompositionIndex(space.d, N - 1)
        table = np.array([[fn(x, c) for c in idx.counts] for x in range(space.d)], dtype=float)
        return cls(space, N, table, idx, constant_C)

    @classmethod
    def from_measure_map(cls, space: FiniteSpace, N: int, fn, constant_C=None) -> "PhiFunction":
        """Build from ``fn(masses) -> vector over atoms`` evaluated at empirical measures."""
        idx = CompositionIndex(space.d, N - 1)
        table = np.stack([np.asarray(fn(c / (N - 1)), dtype=float) for c in idx.counts], axis=1)
        return cls(space, N, table, idx, constant_C)

    def eval(self, x: int, counts) -> float:
        return float(self.table[x, self.index.index(np.asarray(counts))])

    def scaled(self, alpha: float) -> "PhiFunction":
        C = None if self.constant_C is None else abs(alpha) * self.constant_C
        return PhiFunction(self.space, self.N, alpha * self.table, self.index, C)

    def recentered(self, rho) -> "PhiFunction":
        """Subtract the ``rho``-mean over atoms for every empirical measure."""
        p = _masses(rho)
        return PhiFunction(self.space, self.N, self.table - (p @ self.table)[None, :],
                           self.index, self.constant_C)


def build_phi_from_dynamics(kern: MeanFieldKernel, rhobar, N: int) -> PhiFunction:
    """``Phi(x, mu) = (Lambda*(mu) rhobar)(x) / rhobar(x) - Lambda(x, Pi; mu)``."""
    w = np.asarray(rhobar.w if hasattr(rhobar, "w") else rhobar, dtype=float)
    if np.any(w <= 0):
        raise ValueError("rhobar must be strictly positive")
    idx = CompositionIndex(kern.space.d, N - 1)
    lam = kern.empirical_lam(idx.counts)
    star = adjoint_lam(lam, kern.space.nu)
    table = (star @ w) / w[None, :] - lam.sum(axis=-1)
    return PhiFunction(kern.space, N, table.T.copy(), idx)


def compensator(phi: PhiFunction, rho, monte_carlo: bool = False,
                samples: int | None = None, seed: int = 0) -> np.ndarray:
    """Expectation of ``Phi(x, mu)`` with ``mu`` the empirical measure of ``N - 1`` samples."""
    p = _masses(rho)
    if not monte_carlo:
        return phi.table @ phi.index.weights(p)
    samples = DEFAULTS["mc_samples"] if samples is None else samples
    rng = np.random.default_rng(np.random.SeedSequence([seed, phi.N]))
    ids = phi.index.index(rng.multinomial(phi.N - 1, p, size=samples))
    return phi.table[:, ids].mean(axis=1)


def _counts(configs: np.ndarray, d: int) -> np.ndarray:
    return np.stack([(configs == z).sum(axis=1) for z in range(d)], axis=1)


def f_values(phi: PhiFunction, phibar: np.ndarray, configs) -> np.ndarray:
    """``F(x) = sum_k [Phi(x_k, mu(x_{-k})) - phibar(x_k)]`` for a batch ``(M, N)`` of configurations."""
    configs = np.atleast_2d(np.asarray(configs, dtype=np.int64))
    d = phi.space.d
    if configs.shape[1] != phi.N:
        raise ValueError(f"configurations must have {phi.N} particles")
    counts = _counts(configs, d)
    eye = np.eye(d, dtype=np.int64)
    out = np.zeros(len(configs))
    for k in range(phi.N):
        xk = configs[:, k]
        ids = phi.index.index(counts - eye[xk])
        out += phi.table[xk, ids] - phibar[xk]
    return out


def big_f(phi: PhiFunction, rho, config, phibar: np.ndarray | None = None) -> float:
    phibar = compensator(phi, rho) if phibar is None else phibar
    return float(f_values(phi, phibar, np.asarray(config)[None, :])[0])


def big_f_table(phi: PhiFunction, rho, cap: int | None = None) -> np.ndarray:
    """F at every configuration, in base-d little-endian order."""
    d, N = phi.space.d, phi.N
    cap = master_cap() if cap is None else cap
    if d**N > cap:
        raise OverflowError(f"{d**N} configurations exceed the cap {cap}")
    return f_values(phi, compensator(phi, rho), all_configs(d, N))


def conditional_means(Ftable: np.ndarray, rho, d: int, N: int):
    """``E[F]`` and, for each k, ``E_{-k}[F]`` as a function of ``x_k``."""
    p = _masses(rho)
    T = as_tensor(Ftable, d, N)
    full = float(Ftable @ tensorize(p, N))
    cond = []
    for k in range(N):
        Tk = np.moveaxis(T, k, 0).reshape(d, -1)
        cond.append(Tk @ tensorize(p, N - 1))
    return full, np.array(cond)


@dataclass
class DiffOpsReport:
    d1: np.ndarray
    hess_hs: np.ndarray
    d1_max: float
    hess_hs_max: float


def diff_ops(Ftable: np.ndarray, rho, d: int, N: int) -> DiffOpsReport:
    """First-order L2 differences ``d_i F`` and the HS norm of the second-order ones.

    ``d1`` has shape ``(N, d**N)``; ``hess_hs`` has one entry per configuration.
    """
    p = _masses(rho)
    T = as_tensor(Ftable, d, N)
    d1 = np.empty((N,) + T.shape)
    for i in range(N):
        Ti = np.moveaxis(T, i, -1)
        diff = Ti[..., :, None] - Ti[..., None, :]
        d1[i] = np.moveaxis(np.sqrt(0.5 * (diff**2) @ p), -1, i)
    hs2 = np.zeros(T.shape)
    for i in range(N):
        for j in range(i + 1, N):
            Tij = np.moveaxis(T, (i, j), (-2, -1))
            D = (Tij[..., :, :, None, None] - Tij.swapaxes(-1, -2)[..., None, :, :, None]
                 - Tij[..., :, None, None, :] + Tij[..., None, None, :, :])
            dij2 = 0.25 * np.einsum("...abcd,c,d->...ab", D**2, p, p)
            hs2 += 2 * np.moveaxis(dij2, (-2, -1), (i, j))
    d1_flat = np.stack([from_tensor(d1[i]) for i in range(N)])
    hs = from_tensor(np.sqrt(hs2))
    return DiffOpsReport(d1_flat, hs, float(d1_flat.max()), float(hs.max()))


@dataclass
class PhiConditions:
    phi0: float
    phi1: float
    phi2: float
    phi3: float

    @property
    def C_hat(self) -> float:
        return max(self.phi0, self.phi2, self.phi3)

    def as_dict(self) -> dict:
        return {"phi0": self.phi0, "phi1": self.phi1, "phi2": self.phi2, "phi3": self.phi3,
                "C_hat": self.C_hat}


def verify_phi_conditions(phi: PhiFunction, rho, mode: str = "exhaustive",
                          samples: int = 5000, seed: int = 0) -> PhiConditions:
    """Empirical constants: oscillation in x, centering defect, scaled first and second
    differences in the empirical measure."""
    if mode not in ("exhaustive", "sampled"):
        raise ValueError(f"unknown mode {mode!r}")
    p = _masses(rho)
    t = phi.table
    d, n = phi.space.d, phi.N - 1
    phi0 = float((t.max(axis=0) - t.min(axis=0)).max())
    phi1 = float(np.abs(p @ t).max())
    rng = np.random.default_rng(seed)
    _, i, j, _, _ = single_swaps(d, n)
    if mode == "sampled" and len(i) > samples:
        pick = rng.choice(len(i), samples, replace=False)
        i, j = i[pick], j[pick]
    phi2 = n * float(np.abs(t[:, i] - t[:, j]).max()) if len(i) else 0.0
    phi3 = 0.0
    if phi.N >= 3:
        _, rows = double_swaps(d, n)
        if mode == "sampled" and len(rows[0]) > samples:
            pick = rng.choice(len(rows[0]), samples, replace=False)
            rows = [r[pick] for r in rows]
        second = t[:, rows[0]] - t[:, rows[1]] - t[:, rows[2]] + t[:, rows[3]]
        phi3 = n * (n - 1) * float(np.abs(second).max())
    return PhiConditions(phi0, phi1, phi2, phi3)


@dataclass
class ConcentrationReport:
    C_hat: dict
    C: float
    b: float
    moment_estimate: float
    std_error: float
    mom_estimate: float
    samples: int
    seed: int
    exact: float | None = None

    @property
    def passed(self) -> bool:
        ok = (self.moment_estimate - 3 * self.std_error <= 2.0
              and self.mom_estimate - 3 * self.std_error <= 2.0)
        if self.exact is not None:
            ok = ok and self.exact <= 2.0
        return ok

    def as_dict(self) -> dict:
        return {"C_hat": self.C_hat, "C": self.C, "b": self.b,
                "moment_estimate": self.moment_estimate, "std_error": self.std_error,
                "median_of_means": self.mom_estimate, "samples": self.samples,
                "seed": self.seed, "exact": self.exact, "passed": self.passed}


def concentration_test(phi: PhiFunction, rho, samples: int = 100_000, seed: int = 0,
                       C: float | None = None, cap: int | None = None) -> ConcentrationReport:
    """Monte Carlo (and, when small enough, exact) ``E exp((b/C)|F|)`` under the product law."""
    if samples < 1000:
        raise ValueError("concentration_test needs at least 1000 samples")
    p = _masses(rho)
    cond = verify_phi_conditions(phi, p)
    C = C if C is not None else (phi.constant_C if phi.constant_C is not None else cond.C_hat)
    if C == 0:
        return ConcentrationReport(cond.as_dict(), 0.0, B_CONST, 1.0, 0.0, 1.0, samples, seed, 1.0)
    d, N = phi.space.d, phi.N
    phibar = compensator(phi, p)
    rng = np.random.default_rng(np.random.SeedSequence([seed, N]))
    vals = np.empty(samples)
    chunk = 1 << 15
    for s0 in range(0, samples, chunk):
        m = min(chunk, samples - s0)
        configs = rng.choice(d, size=(m, N), p=p)
        vals[s0:s0 + m] = np.exp(B_CONST / C * np.abs(f_values(phi, phibar, configs)))
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(samples))
    buckets = np.array_split(vals, DEFAULTS["mom_buckets"])
    mom = float(np.median([b.mean() for b in buckets]))
    exact = None
    cap = master_cap() if cap is None else cap
    if d**N <= cap:
        F = f_values(phi, phibar, all_configs(d, N))
        exact = float(np.exp(B_CONST / C * np.abs(F)) @ tensorize(p, N))
    return ConcentrationReport(cond.as_dict(), float(C), B_CONST, mean, se, mom, samples, seed, exact)
