"""Finite measure spaces, densities, pairings and empirical-measure combinatorics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.special import gammaln

from .defaults import DEFAULTS


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteSpace:
    """``d`` atoms carrying positive reference weights ``nu``."""

    nu: np.ndarray

    def __post_init__(self):
        nu = _frozen(self.nu)
        if nu.ndim != 1 or nu.size < 1:
            raise ValueError("nu must be a non-empty vector")
        if not np.all(np.isfinite(nu)) or np.any(nu <= 0):
            raise ValueError("reference weights must be finite and strictly positive")
        object.__setattr__(self, "nu", nu)

    @classmethod
    def uniform(cls, d: int, weight: float = 1.0) -> "FiniteSpace":
        return cls(np.full(d, float(weight)))

    @property
    def d(self) -> int:
        return self.nu.size

    @property
    def total_mass(self) -> float:
        return float(self.nu.sum())

    def to_json(self) -> dict:
        return {"d": self.d, "nu": [float(v) for v in self.nu]}

    @classmethod
    def from_json(cls, obj: dict) -> "FiniteSpace":
        nu = obj["nu"]
        if "d" in obj and int(obj["d"]) != len(nu):
            raise ValueError(f"d={obj['d']} does not match len(nu)={len(nu)}")
        return cls(np.asarray(nu, dtype=float))

    def __eq__(self, other):
        return isinstance(other, FiniteSpace) and np.array_equal(self.nu, other.nu)

    def __hash__(self):
        return hash(self.nu.tobytes())


@dataclass(frozen=True, eq=False)
class Density:
    """Density of a measure with respect to ``space.nu``; ``w[x]`` is the value at atom x."""

    space: FiniteSpace
    w: np.ndarray
    probability: bool = True

    def __post_init__(self):
        w = _frozen(self.w)
        if w.shape != (self.space.d,):
            raise ValueError(f"density has shape {w.shape}, expected ({self.space.d},)")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("density values must be finite and nonnegative")
        if self.probability:
            mass = float(w @ self.space.nu)
            if abs(mass - 1.0) > DEFAULTS["mass_tol"]:
                raise ValueError(f"probability density has mass {mass!r}")
        object.__setattr__(self, "w", w)

    @classmethod
    def from_masses(cls, space: FiniteSpace, masses) -> "Density":
        """Density of the probability measure putting ``masses[x]`` on atom x."""
        m = np.asarray(masses, dtype=float)
        m = m / m.sum()
        return cls(space, m / space.nu)

    @property
    def masses(self) -> np.ndarray:
        return self.w * self.space.nu


@dataclass(frozen=True, eq=False)
class SignedMeasure:
    space: FiniteSpace
    m: np.ndarray

    def __post_init__(self):
        m = _frozen(self.m)
        if m.shape != (self.space.d,):
            raise ValueError(f"measure has shape {m.shape}, expected ({self.space.d},)")
        object.__setattr__(self, "m", m)


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    space: FiniteSpace
    counts: np.ndarray = field()

    def __post_init__(self):
        c = _frozen(self.counts, dtype=np.int64)
        if c.shape != (self.space.d,) or np.any(c < 0):
            raise ValueError("counts must be d nonnegative integers")
        if c.sum() < 1:
            raise ValueError("an empirical measure needs at least one particle")
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def masses(self) -> np.ndarray:
        return self.counts / self.n

    def __eq__(self, other):
        return (isinstance(other, EmpiricalMeasure) and self.space == other.space
                and np.array_equal(self.counts, other.counts))

    def __hash__(self):
        return hash(self.counts.tobytes())


def _vec(v) -> np.ndarray:
    if isinstance(v, SignedMeasure):
        return v.m
    if isinstance(v, Density):
        return v.w
    return np.asarray(v, dtype=float)


def pair(mu, phi) -> float:
    """Natural pairing of a measure with a function: sum of ``phi[x] * m[x]``."""
    m, f = _vec(mu), np.asarray(phi, dtype=float)
    if m.shape != f.shape:
        raise ValueError(f"dimension mismatch: {m.shape} vs {f.shape}")
    return float(m @ f)


def pair_nu(psi, phi, space: FiniteSpace) -> float:
    """Pairing of two functions through the reference measure."""
    a, b = _vec(psi), _vec(phi)
    a = np.broadcast_to(a, (space.d,)) if a.ndim == 0 else a
    b = np.broadcast_to(b, (space.d,)) if b.ndim == 0 else b
    if a.shape != (space.d,) or b.shape != (space.d,):
        raise ValueError("dimension mismatch")
    return float(np.sum(a * b * space.nu))


def tv_norm(mu) -> float:
    return float(np.abs(_vec(mu)).sum())


def oscillation(f) -> float:
    f = np.asarray(f, dtype=float)
    return float(f.max() - f.min())


def empirical_of(config: Sequence[int], space: FiniteSpace | int) -> EmpiricalMeasure:
    if isinstance(space, int):
        space = FiniteSpace.uniform(space)
    config = np.asarray(config, dtype=np.int64)
    if config.size == 0:
        raise ValueError("empirical measure of an empty configuration is undefined")
    if config.min() < 0 or config.max() >= space.d:
        raise ValueError("atom index out of range")
    return EmpiricalMeasure(space, np.bincount(config, minlength=space.d))


def truncate(config: Sequence[int], k: int) -> list:
    """Drop the k-th entry (1-based) of a configuration."""
    config = list(config)
    if not 1 <= k <= len(config):
        raise IndexError(f"k={k} out of range for N={len(config)}")
    if len(config) == 1:
        raise ValueError("truncating a single particle leaves an empty configuration")
    return config[: k - 1] + config[k:]


# ---------------------------------------------------------------------------
# compositions


def n_compositions(d: int, n: int) -> int:
    return math.comb(n + d - 1, d - 1)


def _compositions(d: int, n: int) -> Iterator[tuple]:
    if d == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(d - 1, n - first):
            yield (first,) + rest


def compositions(d: int, n: int, cap: int | None = None) -> np.ndarray:
    """All count vectors of ``n`` particles on ``d`` atoms, lexicographically descending."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    cap = DEFAULTS["composition_cap"] if cap is None else cap
    total = n_compositions(d, n)
    if total > cap:
        raise OverflowError(
            f"{total} compositions exceed the cap {cap}; use Monte Carlo mode instead")
    return np.array(list(_compositions(d, n)), dtype=np.int64).reshape(total, d)


def log_multinomial(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts)
    n = counts.sum(axis=-1)
    return gammaln(n + 1) - gammaln(counts + 1).sum(axis=-1)


def enumerate_empiricals(space: FiniteSpace, n: int, cap: int | None = None):
    """Yield ``(EmpiricalMeasure, multinomial weight)`` for every composition of ``n``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    for c in compositions(space.d, n, cap):
        yield EmpiricalMeasure(space, c), math.factorial(n) // math.prod(
            math.factorial(int(k)) for k in c)


def product_weights(counts: np.ndarray, masses: np.ndarray) -> np.ndarray:
    """Probability of each count vector under i.i.d. sampling from ``masses``."""
    from scipy.special import xlogy

    logp = log_multinomial(counts) + xlogy(counts, masses[None, :]).sum(axis=1)
    return np.exp(logp)


class CompositionIndex:
    """Lookup table from count vectors of ``n`` particles to row indices."""

    def __init__(self, d: int, n: int, cap: int | None = None):
        self.d, self.n = d, n
        self.counts = compositions(d, n, cap)
        self._radix = (n + 1) ** np.arange(d, dtype=np.int64)
        keys = self.counts @ self._radix
        self._order = np.argsort(keys)
        self._sorted = keys[self._order]

    def __len__(self):
        return len(self.counts)

    def index(self, counts) -> np.ndarray:
        counts = np.asarray(counts, dtype=np.int64)
        keys = counts @ self._radix
        pos = np.searchsorted(self._sorted, keys)
        pos = np.minimum(pos, len(self._sorted) - 1)
        if np.any(self._sorted[pos] != keys):
            raise KeyError("count vector not a composition of n")
        return self._order[pos]

    def weights(self, masses) -> np.ndarray:
        return product_weights(self.counts, np.asarray(masses, dtype=float))


def single_swaps(d: int, n: int, cap: int | None = None):
    """Index pairs of count vectors of ``n`` particles that differ by moving one particle.

    Returns ``(index, i, j, a, b)`` where rows ``i`` and ``j`` of ``index.counts`` are
    ``sigma + e_a`` and ``sigma + e_b`` for a base ``sigma`` of ``n - 1`` particles, a != b.
    """
    idx = CompositionIndex(d, n, cap)
    base = compositions(d, n - 1, cap)
    a, b = np.nonzero(~np.eye(d, dtype=bool))
    eye = np.eye(d, dtype=np.int64)
    s = np.repeat(base, len(a), axis=0)
    aa, bb = np.tile(a, len(base)), np.tile(b, len(base))
    return idx, idx.index(s + eye[aa]), idx.index(s + eye[bb]), aa, bb


def double_swaps(d: int, n: int, cap: int | None = None):
    """Index quadruples for second differences of a function of ``n``-particle counts.

    For a base ``sigma`` of ``n - 2`` particles and atoms ``(a1, a2, b1, b2)``, returns rows of
    ``sigma+e_a1+e_a2``, ``sigma+e_b1+e_a2``, ``sigma+e_a1+e_b2`` and ``sigma+e_b1+e_b2``.
    """
    if n < 2:
        raise ValueError("second differences need at least two particles")
    idx = CompositionIndex(d, n, cap)
    base = compositions(d, n - 2, cap)
    quad = np.array(np.meshgrid(*[np.arange(d)] * 4, indexing="ij")).reshape(4, -1)
    eye = np.eye(d, dtype=np.int64)
    s = np.repeat(base, quad.shape[1], axis=0)
    a1, a2, b1, b2 = (np.tile(q, len(base)) for q in quad)
    rows = [idx.index(s + eye[u] + eye[v]) for u, v in ((a1, a2), (b1, a2), (a1, b2), (b1, b2))]
    return idx, rows


# ---------------------------------------------------------------------------
# configurations on the product space


def all_configs(d: int, N: int) -> np.ndarray:
    """Every configuration of ``Pi^N`` in base-d little-endian order (particle 1 fastest)."""
    D = d**N
    i = np.arange(D, dtype=np.int64)
    return (i[:, None] // d ** np.arange(N, dtype=np.int64)[None, :]) % d


def config_index(configs, d: int) -> np.ndarray:
    configs = np.asarray(configs, dtype=np.int64)
    return configs @ (d ** np.arange(configs.shape[-1], dtype=np.int64))


def product_nu(space: FiniteSpace, N: int) -> np.ndarray:
    """Reference weights of ``nu`` tensorized ``N`` times, in configuration order."""
    return tensorize(space.nu, N)


def tensorize(w, N: int) -> np.ndarray:
    """Values of ``w(x_1)...w(x_N)`` in configuration order."""
    out = np.ones(1)
    for _ in range(N):
        out = np.kron(w, out)
    return out


def tensorize_list(ws: Sequence) -> np.ndarray:
    """Product of different one-site functions; ``ws[k]`` acts on particle k+1."""
    out = np.ones(1)
    for w in ws:
        out = np.kron(w, out)
    return out


def as_tensor(vec, d: int, N: int) -> np.ndarray:
    """Reshape a configuration-ordered vector into an array with axes ``(x_1, ..., x_N)``."""
    return np.asarray(vec).reshape((d,) * N).transpose(tuple(range(N - 1, -1, -1)))


def from_tensor(arr) -> np.ndarray:
    N = arr.ndim
    return np.ascontiguousarray(arr.transpose(tuple(range(N - 1, -1, -1)))).reshape(-1)
