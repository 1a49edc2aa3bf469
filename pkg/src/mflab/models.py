"""Mean-field jump kernels, averaged kernels and bounded-difference verifiers."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .defaults import DEFAULTS
from .kernels import JumpKernel, adjoint_lam
from .space import (CompositionIndex, Density, FiniteSpace, double_swaps, n_compositions,
                    single_swaps)


@dataclass(frozen=True)
class KernelConstants:
    """Declared regularity constants; ``None`` means unknown."""

    M_lambda: float | None = None
    M_lambda_star: float | None = None
    theta: float | None = None
    lipschitz_L1: float | None = None

    def merged(self, **overrides) -> "KernelConstants":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _masses(mu) -> np.ndarray:
    if isinstance(mu, Density):
        return mu.masses
    if hasattr(mu, "masses"):
        return np.asarray(mu.masses, dtype=float)
    return np.asarray(mu, dtype=float)


class MeanFieldKernel:
    """Map from probability measures on the atoms to jump kernels.

    Subclasses implement :meth:`eval_lam`.  The N-particle kernel evaluated at the
    empirical measure of ``n = N - 1`` particles defaults to ``eval_lam(counts / n)``;
    families with a genuinely N-dependent empirical form override :meth:`empirical_lam`.
    """

    space: FiniteSpace
    constants: KernelConstants = KernelConstants()

    def eval_lam(self, masses: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def eval(self, mu) -> JumpKernel:
        return JumpKernel(self.space, self.eval_lam(_masses(mu)))

    __call__ = eval

    def eval_batch(self, masses: np.ndarray) -> np.ndarray:
        return np.stack([self.eval_lam(m) for m in np.atleast_2d(masses)])

    def empirical_lam(self, counts: np.ndarray) -> np.ndarray:
        """Kernels at the empirical measures of a batch ``(K, d)`` of count vectors."""
        counts = np.atleast_2d(np.asarray(counts, dtype=float))
        return self.eval_batch(counts / counts.sum(axis=1, keepdims=True))

    def empirical(self, mu) -> JumpKernel:
        return JumpKernel(self.space, self.empirical_lam(np.asarray(mu.counts))[0])

    def xi(self, x: np.ndarray, counts: np.ndarray, rho_masses: np.ndarray) -> np.ndarray:
        """Default continuity modulus: TV distance between rows of the empirical and mean-field kernels."""
        emp = self.empirical_lam(counts)
        ref = self.eval_lam(rho_masses)
        x = np.asarray(x)
        return np.abs(emp[np.arange(len(x)), x] - ref[x]).sum(axis=1)


@dataclass(eq=False)
class ConstantKernel(MeanFieldKernel):
    space: FiniteSpace
    lam: np.ndarray
    constants: KernelConstants = KernelConstants()

    def __post_init__(self):
        k = JumpKernel(self.space, self.lam)
        self.lam = k.lam
        star = adjoint_lam(k.lam, self.space.nu)
        self.constants = KernelConstants(k.norm, float(star.sum(axis=1).max()), 0.0, 0.0).merged(
            **vars(self.constants))

    def eval_lam(self, masses):
        return np.array(self.lam)

    def eval_batch(self, masses):
        return np.broadcast_to(self.lam, (len(np.atleast_2d(masses)),) + self.lam.shape).copy()


@dataclass(eq=False)
class TwoThreeBodyKernel(MeanFieldKernel):
    """Kernel built from two-body tensor ``gamma1[x, z, y]`` and three-body tensor
    ``gamma2[x, z, z2, y]``.

    ``eval`` is the N-free mean-field form ``int gamma1 drho + int int gamma2 drho drho``;
    ``empirical_lam`` is the N-particle form that excludes coinciding interaction partners.
    """

    space: FiniteSpace
    gamma1: np.ndarray
    gamma2: np.ndarray | None = None
    c1: float | None = None
    constants: KernelConstants = KernelConstants()

    def __post_init__(self):
        d = self.space.d
        g1 = np.array(self.gamma1, dtype=float)
        g2 = np.zeros((d, d, d, d)) if self.gamma2 is None else np.array(self.gamma2, dtype=float)
        if g1.shape != (d, d, d) or g2.shape != (d, d, d, d):
            raise ValueError("gamma1 must be (d, d, d) and gamma2 (d, d, d, d)")
        if np.any(g1 < 0) or np.any(g2 < 0):
            raise ValueError("interaction tensors must be nonnegative")
        idx = np.arange(d)
        if np.any(g1[idx, :, idx]) or np.any(g2[idx, :, :, idx]):
            warnings.warn("interaction mass on the starting atom set to zero", stacklevel=3)
        g1[idx, :, idx] = 0.0
        g2[idx, :, :, idx] = 0.0
        self.gamma1, self.gamma2 = g1, g2
        self.has_three_body = bool(np.any(g2 > 0))
        c1 = self.bound_c1()
        if self.c1 is None:
            self.c1 = c1
        elif self.c1 < c1 - 1e-12:
            raise ValueError(f"declared c1={self.c1} is below the tensor bound {c1}")
        self.constants = KernelConstants(3 * self.c1, 3 * self.c1, 6 * self.c1, None).merged(
            **vars(self.constants))

    def bound_c1(self) -> float:
        nu = self.space.nu
        g1s = np.moveaxis(self.gamma1, 1, 0)  # (z, x, y)
        g2s = self.gamma2.transpose(1, 2, 0, 3)  # (z, z2, x, y)
        vals = [g1s.sum(-1).max(), adjoint_lam(g1s, nu).sum(-1).max(),
                g2s.sum(-1).max(), adjoint_lam(g2s, nu).sum(-1).max()]
        return float(max(vals))

    def eval_lam(self, masses):
        m = np.asarray(masses, dtype=float)
        return (np.einsum("z,xzy->xy", m, self.gamma1)
                + np.einsum("z,w,xzwy->xy", m, m, self.gamma2))

    def eval_batch(self, masses):
        m = np.atleast_2d(masses)
        return (np.einsum("kz,xzy->kxy", m, self.gamma1)
                + np.einsum("kz,kw,xzwy->kxy", m, m, self.gamma2))

    def empirical_lam(self, counts):
        c = np.atleast_2d(np.asarray(counts, dtype=float))
        n = c.sum(axis=1)
        if np.any(n != n[0]):
            raise ValueError("all count vectors in a batch must have the same size")
        n = float(n[0])
        out = np.einsum("kz,xzy->kxy", c, self.gamma1) / n
        if self.has_three_body:
            if n < 2:
                raise ValueError("the three-body term needs at least two other particles")
            diag = np.einsum("xzzy->xzy", self.gamma2)
            pairs = (np.einsum("kz,kw,xzwy->kxy", c, c, self.gamma2)
                     - np.einsum("kz,xzy->kxy", c, diag))
            out = out + pairs / (n * (n - 1))
        return out

    def averaged_closed_form(self, rho) -> JumpKernel:
        return self.eval(rho)


# ---------------------------------------------------------------------------
# parametrized family


@dataclass(frozen=True)
class Intensity:
    """Scalar jump intensity ``lambda(theta)`` from a small named library.

    ``affine-clamped``: ``clip(a + b . theta, lo, hi)``;
    ``logistic``: ``scale / (1 + exp(-(a + b . theta)))``;
    ``exp-neg``: ``scale * exp(-c |theta - center|^2)``.
    """

    name: str
    params: dict

    def __post_init__(self):
        if self.name not in ("affine-clamped", "logistic", "exp-neg"):
            raise ValueError(f"unknown intensity {self.name!r}")
        if self.name == "affine-clamped" and not 0 <= self.params["lo"] <= self.params["hi"]:
            raise ValueError("affine-clamped intensity needs 0 <= lo <= hi")
        if self.name in ("logistic", "exp-neg") and self.params["scale"] < 0:
            raise ValueError("scale must be nonnegative")
        if self.name == "exp-neg" and self.params["c"] < 0:
            raise ValueError("c must be nonnegative")

    def _b(self, k):
        return np.broadcast_to(np.asarray(self.params.get("b", 0.0), dtype=float), (k,))

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        k = theta.shape[-1]
        p = self.params
        if self.name == "affine-clamped":
            return np.clip(p["a"] + theta @ self._b(k), p["lo"], p["hi"])
        if self.name == "logistic":
            return p["scale"] / (1.0 + np.exp(-(p["a"] + theta @ self._b(k))))
        center = np.broadcast_to(np.asarray(p.get("center", 0.0), dtype=float), (k,))
        return p["scale"] * np.exp(-p["c"] * ((theta - center) ** 2).sum(axis=-1))

    def sup(self, k: int) -> float:
        if self.name == "affine-clamped":
            return float(self.params["hi"])
        return float(self.params["scale"])

    def lipschitz(self, k: int) -> float:
        p = self.params
        if self.name == "affine-clamped":
            return float(np.linalg.norm(self._b(k)))
        if self.name == "logistic":
            return float(p["scale"] * np.linalg.norm(self._b(k)) / 4)
        return float(p["scale"] * math.sqrt(2 * p["c"]) * math.exp(-0.5))

    def curvature(self, k: int) -> float | None:
        """Bound on the Hessian operator norm, ``None`` when not twice differentiable."""
        p = self.params
        if self.name == "affine-clamped":
            return None
        if self.name == "logistic":
            return float(p["scale"] * np.linalg.norm(self._b(k)) ** 2 / (6 * math.sqrt(3)))
        return float(2 * p["c"] * p["scale"])


@dataclass(eq=False)
class ParametrizedKernel(MeanFieldKernel):
    """``Lambda(x, {y}; mu) = lambda((kappa * mu)(x)) P[x, y] nu[y]`` with ``kappa`` in R^k."""

    space: FiniteSpace
    kappa: np.ndarray
    intensity: Intensity
    P: np.ndarray
    constants: KernelConstants = KernelConstants()
    m1: float = field(init=False)
    m2: float = field(init=False)
    m3: float | None = field(init=False)

    def __post_init__(self):
        d = self.space.d
        kappa = np.array(self.kappa, dtype=float)
        if kappa.ndim == 2:
            kappa = kappa[:, :, None]
        P = np.array(self.P, dtype=float)
        if kappa.shape[:2] != (d, d) or P.shape != (d, d):
            raise ValueError("kappa must be (d, d, k) and P must be (d, d)")
        if np.any(P < 0):
            raise ValueError("P must be nonnegative")
        np.fill_diagonal(P, 0.0)
        self.kappa, self.P = kappa, P
        k = kappa.shape[2]
        pmax = float(P.max())
        self.m1 = max(float(np.linalg.norm(kappa, axis=2).max()), self.intensity.sup(k) * pmax)
        self.m2 = self.intensity.lipschitz(k) * pmax
        curv = self.intensity.curvature(k)
        self.m3 = None if curv is None else curv * pmax
        vol = self.space.total_mass
        theta = 2 * vol * self.m1 * self.m2
        if self.m3 is not None:
            theta = max(theta, 8 * vol * self.m1**2 * self.m3)
        self.constants = KernelConstants(
            self.m1 * vol, self.m1 * vol,
            theta if self.m3 is not None else None,
            vol * self.m1 * self.m2).merged(**vars(self.constants))

    @property
    def k(self) -> int:
        return self.kappa.shape[2]

    def theta_of(self, masses: np.ndarray) -> np.ndarray:
        """``(kappa * mu)(x)`` for a batch of measures: shape ``(K, d, k)``."""
        return np.einsum("xyk,by->bxk", self.kappa, np.atleast_2d(masses))

    def eval_batch(self, masses):
        lam = self.intensity(self.theta_of(masses))  # (K, d)
        return lam[:, :, None] * (self.P * self.space.nu[None, :])[None]

    def eval_lam(self, masses):
        return self.eval_batch(masses)[0]

    def xi(self, x, counts, rho_masses):
        counts = np.atleast_2d(np.asarray(counts, dtype=float))
        mu = counts / counts.sum(axis=1, keepdims=True)
        th_mu = self.theta_of(mu)[np.arange(len(x)), x]
        th_rho = self.theta_of(rho_masses)[0][x]
        return self.m2 * self.space.total_mass * np.linalg.norm(th_mu - th_rho, axis=1)

    def epsilon_bound(self, N: int) -> float:
        return self.m2 * self.m1 * self.space.total_mass / math.sqrt(N - 1)


# ---------------------------------------------------------------------------
# averaged kernels


class AveragedKernel(MeanFieldKernel):
    """Expectation of the N-particle kernel over ``N - 1`` i.i.d. samples from ``rho``.

    The empirical kernels of every composition are tabulated once, so each evaluation
    is a weighted sum.  Above ``mc_threshold`` compositions the expectation is replaced
    by a seeded Monte Carlo average, if ``monte_carlo`` is set.
    """

    def __init__(self, kern: MeanFieldKernel, N: int, *, monte_carlo: bool = False,
                 mc_threshold: int | None = None, mc_samples: int | None = None,
                 seed: int = 0, cap: int | None = None):
        if N < 2:
            raise ValueError("averaging needs N >= 2")
        self.kern, self.N, self.space = kern, N, kern.space
        n = N - 1
        mc_threshold = DEFAULTS["mc_threshold"] if mc_threshold is None else mc_threshold
        self.mc_samples = DEFAULTS["mc_samples"] if mc_samples is None else mc_samples
        self.seed = seed
        self.exact = n_compositions(self.space.d, n) <= mc_threshold
        if self.exact:
            self.index = CompositionIndex(self.space.d, n, cap)
            self.table = kern.empirical_lam(self.index.counts)
        elif not monte_carlo:
            raise OverflowError(
                f"{n_compositions(self.space.d, n)} compositions exceed the threshold "
                f"{mc_threshold}; enable Monte Carlo averaging")
        c = kern.constants
        self.constants = KernelConstants(
            c.M_lambda, c.M_lambda_star, None,
            None if c.M_lambda is None else (N - 1) * c.M_lambda)

    def eval_lam(self, masses):
        masses = np.clip(np.asarray(masses, dtype=float), 0.0, None)
        masses = masses / masses.sum()
        if self.exact:
            return np.tensordot(self.index.weights(masses), self.table, axes=1)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.N]))
        counts = rng.multinomial(self.N - 1, masses, size=self.mc_samples)
        return self.kern.empirical_lam(counts).mean(axis=0)


def averaged_kernel(kern: MeanFieldKernel, rho, N: int, **kw) -> JumpKernel:
    return AveragedKernel(kern, N, **kw).eval(rho)


# ---------------------------------------------------------------------------
# verifiers


@dataclass
class VerifyReport:
    """Empirical sup of a bounded-difference quantity with its maximizing witness."""

    theta_hat: float
    witnesses: dict
    declared: float | None = None
    per_kernel: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.declared is None or self.theta_hat <= self.declared * (1 + 1e-12) + 1e-12


def _jnorm(stack: np.ndarray) -> np.ndarray:
    return np.abs(stack).sum(axis=-1).max(axis=-1)


def _tables(kern, counts):
    lam = kern.empirical_lam(counts)
    return {"lambda": lam, "lambda_star": adjoint_lam(lam, kern.space.nu)}


def verify_A3(kern: MeanFieldKernel, N: int, mode: str = "exhaustive", samples: int = 2000,
              seed: int = 0, cap: int | None = None) -> VerifyReport:
    """Sup of ``(N-1) ||U(mu) - U(mu')||_J`` over single-particle swaps, ``U`` in {Lambda, Lambda*}."""
    if N < 2:
        raise ValueError("N must be at least 2")
    d, n = kern.space.d, N - 1
    if mode == "exhaustive":
        cap = DEFAULTS["composition_cap"] if cap is None else cap
        if n_compositions(d, n - 1) * d * d > cap:
            raise OverflowError("exhaustive A3 sweep exceeds the cap")
        idx, i, j, a, b = single_swaps(d, n)
        counts = idx.counts
        tabs = _tables(kern, counts)
        ci, cj = counts[i], counts[j]
    elif mode == "sampled":
        rng = np.random.default_rng(seed)
        base = np.stack([rng.multinomial(n - 1, rng.dirichlet(np.ones(d))) for _ in range(samples)])
        a = rng.integers(d, size=samples)
        b = (a + rng.integers(1, d, size=samples)) % d if d > 1 else a
        eye = np.eye(d, dtype=np.int64)
        ci, cj = base + eye[a], base + eye[b]
        counts = np.concatenate([ci, cj])
        tabs = _tables(kern, counts)
        i, j = np.arange(samples), samples + np.arange(samples)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    best, wit, per = -1.0, {}, {}
    for name, tab in tabs.items():
        vals = n * _jnorm(tab[i] - tab[j]) if len(i) else np.zeros(1)
        per[name] = float(vals.max())
        if len(i) and vals.max() > best:
            m = int(vals.argmax())
            best = float(vals[m])
            wit = {"kernel": name, "mu": ci[m].tolist(), "mu_swapped": cj[m].tolist(),
                   "from": int(a[m]), "to": int(b[m])}
    return VerifyReport(max(best, 0.0), wit, kern.constants.theta, per)


def verify_A4(kern: MeanFieldKernel, N: int, mode: str = "exhaustive", samples: int = 2000,
              seed: int = 0, cap: int | None = None) -> VerifyReport:
    """Sup of ``(N-1)(N-2) ||U(mu) - U(mu1) - U(mu2) + U(mu12)||_J`` over double swaps."""
    if N < 3:
        raise ValueError("the second-order condition needs N >= 3")
    d, n = kern.space.d, N - 1
    if mode == "exhaustive":
        cap = DEFAULTS["composition_cap"] if cap is None else cap
        if n_compositions(d, n - 2) * d**4 > cap:
            raise OverflowError("exhaustive A4 sweep exceeds the cap")
        idx, rows = double_swaps(d, n)
        tabs = _tables(kern, idx.counts)
        counts_of = [idx.counts[r] for r in rows]
    elif mode == "sampled":
        rng = np.random.default_rng(seed)
        base = np.stack([rng.multinomial(n - 2, rng.dirichlet(np.ones(d))) for _ in range(samples)])
        a1, a2, b1, b2 = rng.integers(d, size=(4, samples))
        eye = np.eye(d, dtype=np.int64)
        counts_of = [base + eye[u] + eye[v] for u, v in ((a1, a2), (b1, a2), (a1, b2), (b1, b2))]
        tabs = _tables(kern, np.concatenate(counts_of))
        rows = [k * samples + np.arange(samples) for k in range(4)]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    best, wit, per = -1.0, {}, {}
    scale = n * (n - 1)
    for name, tab in tabs.items():
        second = tab[rows[0]] - tab[rows[1]] - tab[rows[2]] + tab[rows[3]]
        vals = scale * _jnorm(second)
        per[name] = float(vals.max())
        if vals.max() > best:
            m = int(vals.argmax())
            best = float(vals[m])
            wit = {"kernel": name, "mu": counts_of[0][m].tolist(),
                   "mu1": counts_of[1][m].tolist(), "mu2": counts_of[2][m].tolist(),
                   "mu12": counts_of[3][m].tolist()}
    return VerifyReport(max(best, 0.0), wit, kern.constants.theta, per)


@dataclass
class IntensitySweep:
    M_lambda_hat: float
    M_lambda_star_hat: float


def intensity_sweep(kern: MeanFieldKernel, N: int | None = None, samples: int = 1000,
                    seed: int = 0) -> IntensitySweep:
    """Max kernel norms; over every empirical measure of ``N - 1`` particles when ``N`` is
    given, else over ``samples`` random probability measures."""
    d = kern.space.d
    if N is not None:
        lam = kern.empirical_lam(CompositionIndex(d, N - 1).counts)
    else:
        rng = np.random.default_rng(seed)
        masses = np.concatenate([rng.dirichlet(np.ones(d), size=samples), np.eye(d)])
        lam = kern.eval_batch(masses)
    star = adjoint_lam(lam, kern.space.nu)
    return IntensitySweep(float(_jnorm(lam).max()), float(_jnorm(star).max()))


def lipschitz_sweep(kern: MeanFieldKernel, samples: int = 1000, seed: int = 0) -> float:
    """Empirical ``sup ||Lambda(mu) - Lambda(mu')||_J / ||mu - mu'||_TV`` over random pairs."""
    d = kern.space.d
    rng = np.random.default_rng(seed)
    mu = rng.dirichlet(np.ones(d), size=samples)
    eps = rng.dirichlet(np.ones(d), size=samples)
    step = 10.0 ** rng.uniform(-4, 0, size=(samples, 1))
    mu2 = (1 - step) * mu + step * eps
    num = _jnorm(kern.eval_batch(mu) - kern.eval_batch(mu2))
    den = np.abs(mu - mu2).sum(axis=1)
    ok = den > 0
    return float((num[ok] / den[ok]).max()) if ok.any() else 0.0


@dataclass
class EpsilonEstimate:
    estimate: float
    std_error: float
    samples: int
    bound: float | None = None

    @property
    def ok(self) -> bool:
        return self.bound is None or self.estimate <= self.bound + 3 * self.std_error


def epsilon_N(kern: MeanFieldKernel, rho, N: int, samples: int = 10_000,
              seed: int = 0) -> EpsilonEstimate:
    """Monte Carlo estimate of ``E Xi(x_1, mu(x_{-1}), rho)`` under ``rho`` tensorized N times."""
    if samples < 100:
        raise ValueError("epsilon_N needs at least 100 samples")
    if N < 2:
        raise ValueError("N must be at least 2")
    p = _masses(rho)
    p = np.clip(p, 0, None) / p.sum()
    rng = np.random.default_rng(np.random.SeedSequence([seed, N]))
    x1 = rng.choice(len(p), size=samples, p=p)
    counts = rng.multinomial(N - 1, p, size=samples)
    vals = kern.xi(x1, counts, p)
    bound = kern.epsilon_bound(N) if hasattr(kern, "epsilon_bound") else None
    return EpsilonEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples)),
                           samples, bound)


def epsilon_N_exact(kern: MeanFieldKernel, rho, N: int) -> float:
    """Exact ``epsilon_N`` by enumerating compositions of the other ``N - 1`` particles."""
    p = _masses(rho)
    idx = CompositionIndex(kern.space.d, N - 1)
    w = idx.weights(p)
    total = 0.0
    for x in range(kern.space.d):
        if p[x] == 0:
            continue
        vals = kern.xi(np.full(len(idx), x), idx.counts, p)
        total += p[x] * float(w @ vals)
    return total

