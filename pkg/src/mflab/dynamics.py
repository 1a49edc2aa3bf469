"""Mean-field, averaged, prescribed and linear evolutions; master equation; particle simulator."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .defaults import DEFAULTS, master_cap
from .kernels import JumpKernel, RateGenerator, adjoint_matrix, l1_operator_norm
from .models import (AveragedKernel, MeanFieldKernel, epsilon_N, intensity_sweep,
                     lipschitz_sweep)
from .space import (CompositionIndex, Density, FiniteSpace, all_configs, n_compositions,
                    oscillation, product_nu, tensorize)


class ConvergenceError(RuntimeError):
    pass


class NegativityError(RuntimeError):
    pass


class CapExceeded(OverflowError):
    pass


def _density_values(rho) -> np.ndarray:
    return np.array(rho.w if isinstance(rho, Density) else rho, dtype=float)


def _lam_of(obj, t: float) -> np.ndarray:
    if callable(obj) and not isinstance(obj, JumpKernel):
        obj = obj(t)
    return obj.lam if isinstance(obj, JumpKernel) else np.asarray(obj, dtype=float)


@dataclass
class EvolutionProblem:
    """One evolution of a density on the atoms.

    ``mode`` is ``"meanfield"`` (kernel evaluated at the solution itself), ``"averaged"``
    (averaged kernel over ``N - 1`` i.i.d. samples of the solution), ``"prescribed"``
    (kernel evaluated along ``drive(t)``, a density-valued curve) or ``"linear"``
    (``frozen`` kernel, either a JumpKernel or a function of time returning one).
    """

    g: RateGenerator
    kern: MeanFieldKernel | None
    rho0: np.ndarray
    t_end: float
    dt: float = DEFAULTS["dt"]
    mode: str = "meanfield"
    N: int | None = None
    drive: Callable[[float], np.ndarray] | None = None
    frozen: object = None

    def __post_init__(self):
        self.rho0 = _density_values(self.rho0)
        if self.dt <= 0 or self.t_end < 0:
            raise ValueError("need dt > 0 and t_end >= 0")
        if self.mode not in ("meanfield", "averaged", "prescribed", "linear"):
            raise ValueError(f"unknown mode {self.mode!r}")
        mass = float(self.rho0 @ self.g.space.nu)
        if np.any(self.rho0 < 0) or abs(mass - 1) > DEFAULTS["mass_tol"]:
            raise ValueError("rho0 must be a probability density")
        if self.mode == "averaged" and (self.N is None or self.N < 2):
            raise ValueError("averaged mode needs N >= 2")
        if self.mode == "prescribed" and self.drive is None:
            raise ValueError("prescribed mode needs a drive curve")
        if self.mode == "linear" and self.frozen is None:
            raise ValueError("linear mode needs a frozen kernel")
        if self.mode in ("meanfield", "averaged", "prescribed") and self.kern is None:
            raise ValueError(f"{self.mode} mode needs a mean-field kernel")

    def rhs(self) -> Callable[[float, np.ndarray], np.ndarray]:
        nu = self.g.space.nu
        kstar = np.asarray(self.g.kstar)
        if self.mode == "linear":
            if isinstance(self.frozen, JumpKernel) or not callable(self.frozen):
                A = kstar + adjoint_matrix(_lam_of(self.frozen, 0.0), nu)
                return lambda t, r: A @ r
            return lambda t, r: (kstar + adjoint_matrix(_lam_of(self.frozen, t), nu)) @ r
        kern = AveragedKernel(self.kern, self.N) if self.mode == "averaged" else self.kern
        if self.mode == "prescribed":
            drive = self.drive

            def f(t, r):
                return kstar @ r + adjoint_matrix(kern.eval_lam(_density_values(drive(t)) * nu), nu) @ r
            return f

        def f(t, r):
            m = np.clip(r, 0.0, None) * nu
            return kstar @ r + adjoint_matrix(kern.eval_lam(m / m.sum()), nu) @ r
        return f

    def growth_constant(self) -> float:
        """``M_K + M_Lambda + M*_Lambda`` for the log-oscillation bound."""
        if self.mode == "linear":
            lam = _lam_of(self.frozen, 0.0)
            k = JumpKernel(self.g.space, lam)
            return self.g.M_K + k.norm + k.adjoint().norm
        c = self.kern.constants
        ml, mls = c.M_lambda, c.M_lambda_star
        if ml is None or mls is None:
            sw = intensity_sweep(self.kern, self.N if self.mode == "averaged" else None)
            ml = sw.M_lambda_hat if ml is None else ml
            mls = sw.M_lambda_star_hat if mls is None else mls
        return self.g.M_K + ml + mls


@dataclass
class SolutionTrace:
    space: FiniteSpace
    times: np.ndarray
    densities: np.ndarray
    derivs: np.ndarray
    mass_defect: np.ndarray
    min_value: np.ndarray
    log_oscillation: np.ndarray
    halving_defect: float | None = None

    @property
    def final(self) -> np.ndarray:
        return self.densities[-1]

    def at(self, t: float) -> np.ndarray:
        """Cubic Hermite interpolation between grid points."""
        times = self.times
        if t <= times[0]:
            return self.densities[0].copy()
        if t >= times[-1]:
            return self.densities[-1].copy()
        i = min(int(np.searchsorted(times, t, side="right")) - 1, len(times) - 2)
        h = times[i + 1] - times[i]
        s = (t - times[i]) / h
        y0, y1 = self.densities[i], self.densities[i + 1]
        m0, m1 = self.derivs[i] * h, self.derivs[i + 1] * h
        return ((2 * s**3 - 3 * s**2 + 1) * y0 + (s**3 - 2 * s**2 + s) * m0
                + (-2 * s**3 + 3 * s**2) * y1 + (s**3 - s**2) * m1)

    __call__ = at

    def log_oscillation_excess(self, M: float) -> float:
        """Largest violation of ``osc(log rho_t) <= osc(log rho_0) + 2 M t`` (negative if none)."""
        bound = self.log_oscillation[0] + 2 * M * self.times
        return float(np.max(self.log_oscillation - bound))

    def to_csv(self, path) -> None:
        d = self.space.d
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"rho_{x}" for x in range(d)]
                       + ["mass_defect", "min_value", "log_oscillation"])
            for i, t in enumerate(self.times):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in self.densities[i]]
                           + [repr(float(self.mass_defect[i])), repr(float(self.min_value[i])),
                              repr(float(self.log_oscillation[i]))])


def _log_osc(r: np.ndarray) -> float:
    return math.inf if np.any(r <= 0) else oscillation(np.log(r))


def _grid(t_end: float, dt: float) -> tuple[int, float]:
    n = max(1, int(math.ceil(t_end / dt - 1e-9))) if t_end > 0 else 0
    return n, (t_end / n if n else dt)


def _rk4(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate(f, rho0, nu, t_end, dt, space) -> SolutionTrace:
    n, h = _grid(t_end, dt)
    tol = DEFAULTS["clamp_tol"]
    times = np.linspace(0.0, t_end, n + 1) if n else np.zeros(1)
    dens = np.empty((n + 1, len(rho0)))
    derivs = np.empty_like(dens)
    defect = np.zeros(n + 1)
    minv = np.empty(n + 1)
    losc = np.empty(n + 1)
    y = rho0.copy()
    dens[0], minv[0], losc[0] = y, y.min(), _log_osc(y)
    derivs[0] = f(0.0, y)
    for i in range(n):
        y = _rk4(f, times[i], y, h)
        minv[i + 1] = y.min()
        if y.min() < -tol:
            raise NegativityError(f"density reached {y.min():.3e} at t={times[i + 1]:.6g}")
        y = np.maximum(y, 0.0)
        mass = float(y @ nu)
        defect[i + 1] = abs(mass - 1.0)
        y = y / mass
        dens[i + 1] = y
        derivs[i + 1] = f(times[i + 1], y)
        losc[i + 1] = _log_osc(y)
    return SolutionTrace(space, times, dens, derivs, defect, minv, losc)


def solve(problem: EvolutionProblem, certify: bool = True) -> SolutionTrace:
    """Fourth-order fixed-step integration with a step-halving certificate at ``t_end``."""
    space = problem.g.space
    f = problem.rhs()
    trace = _integrate(f, problem.rho0, space.nu, problem.t_end, problem.dt, space)
    if certify and problem.t_end > 0:
        fine = _integrate(f, problem.rho0, space.nu, problem.t_end, problem.dt / 2, space)
        gap = float(np.abs(fine.final - trace.final) @ space.nu)
        trace.halving_defect = gap
        if gap > DEFAULTS["halving_tol"]:
            raise ConvergenceError(f"step halving changed the final density by {gap:.3e} in L1")
    if trace.mass_defect.max() > DEFAULTS["trace_mass_tol"]:
        raise ConvergenceError(f"mass defect {trace.mass_defect.max():.3e} along the trace")
    return trace


def integrate_linear(A_of_t, x0, t_end: float, dt: float):
    """Plain RK4 for ``x' = A(t) x`` with no normalization; returns ``(times, states)``."""
    n, h = _grid(t_end, dt)
    times = np.linspace(0.0, t_end, n + 1) if n else np.zeros(1)
    xs = np.empty((n + 1, len(x0)))
    xs[0] = x0
    for i in range(n):
        xs[i + 1] = _rk4(lambda t, y: A_of_t(t) @ y, times[i], xs[i], h)
    return times, xs


# ---------------------------------------------------------------------------
# comparison and stability


def _generator_curve(g: RateGenerator, curve):
    nu = g.space.nu
    if isinstance(curve, JumpKernel) or not callable(curve):
        A = adjoint_matrix(_lam_of(curve, 0.0), nu)
        return lambda t: A
    return lambda t: adjoint_matrix(_lam_of(curve, t), nu)


@dataclass
class ComparisonReport:
    ok: bool
    min_gap: float


def comparison_check(g: RateGenerator, curve, rho0, sigma0, t_end: float,
                     dt: float = 1e-2) -> ComparisonReport:
    """Integrate two ordered initial data under the same linear flow and check the order persists."""
    rho0, sigma0 = _density_values(rho0), _density_values(sigma0)
    if np.any(rho0 < sigma0):
        raise ValueError("need rho0 >= sigma0 pointwise")
    A = _generator_curve(g, curve)
    kstar = np.asarray(g.kstar)
    full = lambda t: kstar + A(t)  # noqa: E731
    _, r = integrate_linear(full, rho0, t_end, dt)
    _, s = integrate_linear(full, sigma0, t_end, dt)
    gap = float((r - s).min())
    return ComparisonReport(gap >= -1e-9, gap)


@dataclass
class StabilityReport:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    M_T: float
    C_T: float

    @property
    def ok(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs + 1e-10))


def stability_check(g: RateGenerator, curveA, curveB, rho0, sigma0, t_end: float,
                    dt: float = 1e-2) -> StabilityReport:
    """L1 stability of two linear flows sharing ``K*`` with exact operator norms on the grid."""
    nu = g.space.nu
    rho0, sigma0 = _density_values(rho0), _density_values(sigma0)
    A, B = _generator_curve(g, curveA), _generator_curve(g, curveB)
    kstar = np.asarray(g.kstar)
    times, r = integrate_linear(lambda t: kstar + A(t), rho0, t_end, dt)
    _, s = integrate_linear(lambda t: kstar + B(t), sigma0, t_end, dt)
    probe = np.union1d(times, (times[:-1] + times[1:]) / 2) if len(times) > 1 else times
    M_T = max(l1_operator_norm(A(t), nu) for t in probe)
    C_T = max(l1_operator_norm(A(t) - B(t), nu) for t in probe)
    lhs = np.abs(r - s) @ nu
    z0 = float(np.abs(rho0 - sigma0) @ nu)
    growth = times if M_T == 0 else np.expm1(times * M_T) / M_T
    return StabilityReport(times, lhs, z0 + C_T * growth, M_T, C_T)


@dataclass
class GapReport:
    l1_gap: float
    gap_bound: float
    eps_sup: float
    K: float
    meanfield: SolutionTrace = field(repr=False)
    averaged: SolutionTrace = field(repr=False)

    @property
    def ok(self) -> bool:
        return self.l1_gap <= self.gap_bound + 1e-10


def averaged_vs_meanfield(kern: MeanFieldKernel, g: RateGenerator, rho0, N: int, t: float,
                          dt: float = 1e-2, samples: int = 20_000, seed: int = 0,
                          eps_points: int = 11, C: float | None = None,
                          M_lambda: float | None = None) -> GapReport:
    """L1 gap between mean-field and averaged evolutions with its a priori bound.

    The continuity modulus is estimated by Monte Carlo on ``eps_points`` grid times; the
    supremum of ``estimate + 3 SE`` enters the bound.
    """
    rho0 = _density_values(rho0)
    mf = solve(EvolutionProblem(g, kern, rho0, t, dt, "meanfield"))
    av = solve(EvolutionProblem(g, kern, rho0, t, dt, "averaged", N=N))
    nu = g.space.nu
    gap = float(np.abs(mf.final - av.final) @ nu)
    c = kern.constants
    M = M_lambda if M_lambda is not None else (
        c.M_lambda if c.M_lambda is not None else intensity_sweep(kern).M_lambda_hat)
    Lip = C if C is not None else (
        c.lipschitz_L1 if c.lipschitz_L1 is not None else lipschitz_sweep(kern))
    K = 2 * (M + Lip)
    eps_sup = 0.0
    for i, s in enumerate(np.linspace(0.0, t, eps_points)):
        est = epsilon_N(kern, av.at(s) * nu, N, samples=samples, seed=seed + i)
        eps_sup = max(eps_sup, est.estimate + 3 * est.std_error)
    factor = t if K == 0 else math.expm1(K * t) / K
    return GapReport(gap, 2 * t * factor * eps_sup, eps_sup, K, mf, av)


# ---------------------------------------------------------------------------
# master equation


@dataclass
class MasterEquation:
    """Adjoint generator of the N-particle system on densities over ``Pi^N``.

    Configurations are indexed base-d little-endian: ``index = sum_k x_k d**(k-1)``.
    """

    space: FiniteSpace
    N: int
    generator: sp.csr_matrix

    @property
    def D(self) -> int:
        return self.space.d ** self.N

    @property
    def nu_N(self) -> np.ndarray:
        return product_nu(self.space, self.N)

    def to_csv(self, path, rho) -> None:
        d = self.space.d
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index"] + [f"x{k + 1}" for k in range(self.N)] + ["density"])
            for i, row in enumerate(all_configs(d, self.N)):
                w.writerow([i] + row.tolist() + [repr(float(rho[i]))])


def _check_cap(d: int, N: int, cap: int | None):
    cap = master_cap() if cap is None else cap
    if d**N > cap:
        raise CapExceeded(f"{d}**{N} = {d**N} states exceed the cap {cap}")


def build_master_equation(g: RateGenerator, kern: MeanFieldKernel, N: int,
                          cap: int | None = None) -> MasterEquation:
    if N < 2:
        raise ValueError("the N-particle generator needs N >= 2")
    d = g.space.d
    _check_cap(d, N, cap)
    nu = g.space.nu
    D = d**N
    configs = all_configs(d, N)
    counts = np.stack([(configs == z).sum(axis=1) for z in range(d)], axis=1)
    idx = CompositionIndex(d, N - 1)
    lam_tab = kern.empirical_lam(idx.counts)
    star_tab = np.swapaxes(lam_tab, -1, -2) * nu[None, :] / nu[:, None]
    exit_tab = lam_tab.sum(axis=-1)
    kstar = np.asarray(g.kstar)
    eye = np.eye(d, dtype=np.int64)
    rows, cols, vals = [], [], []
    ar = np.arange(D)
    for k in range(N):
        xk = configs[:, k]
        ids = idx.index(counts - eye[xk])
        for y in range(d):
            col = ar + (y - xk) * d**k
            v = star_tab[ids, xk, y] + kstar[xk, y]
            v = np.where(xk == y, kstar[xk, xk] - exit_tab[ids, xk], v)
            rows.append(ar)
            cols.append(col)
            vals.append(v)
    L = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(D, D)).tocsr()
    L.eliminate_zeros()
    return MasterEquation(g.space, N, L)


def _clean(rho):
    tol = DEFAULTS["clamp_tol"]
    if rho.min() < -tol * max(1.0, np.abs(rho).max()):
        raise NegativityError(f"master-equation density reached {rho.min():.3e}")
    rho = np.maximum(rho, 0.0)
    return rho


def _master_rk4(me: MasterEquation, rho0, t, dt):
    L = me.generator
    n, h = _grid(t, dt)
    y = rho0.copy()
    f = lambda _t, v: L @ v  # noqa: E731
    for i in range(n):
        y = _rk4(f, i * h, y, h)
    return y


def solve_master(me: MasterEquation, rho0, t: float, dt: float | None = None) -> np.ndarray:
    """``exp(t L*) rho0``: dense exponential for small systems, else certified RK4."""
    rho0 = np.asarray(rho0, dtype=float)
    if rho0.shape != (me.D,):
        raise ValueError(f"density on Pi^N must have {me.D} entries")
    if t == 0:
        return rho0.copy()
    nu_N = me.nu_N
    if me.D <= DEFAULTS["master_expm_max"]:
        out = scipy.linalg.expm(t * me.generator.toarray()) @ rho0
    else:
        # halve the step until two successive resolutions agree, at most six times
        rate = float(np.abs(me.generator.diagonal()).max())
        dt = dt if dt is not None else min(0.1, 0.5 / max(rate, 1e-12))
        out = _master_rk4(me, rho0, t, dt)
        for _ in range(6):
            fine = _master_rk4(me, rho0, t, dt / 2)
            gap = float(np.abs(out - fine) @ nu_N)
            out, dt = fine, dt / 2
            if gap <= DEFAULTS["halving_tol"]:
                break
        else:
            raise ConvergenceError(f"master RK4 halving gap {gap:.3e}")
    out = _clean(out)
    return out


def master_trace(me: MasterEquation, rho0, t_end: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Master-equation solution on a uniform grid, propagated by the exact one-step map."""
    rho0 = np.asarray(rho0, dtype=float)
    n, h = _grid(t_end, dt)
    times = np.linspace(0.0, t_end, n + 1) if n else np.zeros(1)
    out = np.empty((n + 1, me.D))
    out[0] = rho0
    if me.D <= DEFAULTS["master_expm_max"]:
        P = scipy.linalg.expm(h * me.generator.toarray())
        step = lambda v: P @ v  # noqa: E731
    else:
        step = lambda v: solve_master(me, v, h)  # noqa: E731
    for i in range(n):
        out[i + 1] = _clean(step(out[i]))
    return times, out


def product_density(rho, N: int) -> np.ndarray:
    return tensorize(_density_values(rho), N)


# ---------------------------------------------------------------------------
# particle simulation


@dataclass
class ParticleTrajectory:
    times: np.ndarray
    configs: np.ndarray
    seed: int

    def state_at(self, t: float) -> np.ndarray:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.configs[max(i, 0)]


class _Uniformizer:
    """Thinning sampler with per-particle majorant ``max|q_xx| + M_Lambda``."""

    def __init__(self, g: RateGenerator, kern: MeanFieldKernel, N: int,
                 M_lambda: float | None = None):
        if N < 2:
            raise ValueError("simulation needs N >= 2")
        d = g.space.d
        self.d, self.N = d, N
        self.q_off = np.array(g.q) - np.diag(np.diag(g.q))
        if n_compositions(d, N - 1) <= DEFAULTS["mc_threshold"]:
            self.idx = CompositionIndex(d, N - 1)
            self.lam_tab = kern.empirical_lam(self.idx.counts)
            est = float(self.lam_tab.sum(axis=-1).max())
            M_lambda = est if M_lambda is None else max(M_lambda, est)
        else:
            raise CapExceeded("too many empirical measures to tabulate the kernel")
        self.rate = g.max_exit_rate + M_lambda
        self.eye = np.eye(d, dtype=np.int64)

    def total_rate(self) -> float:
        return self.N * self.rate

    def step(self, configs, counts, rng):
        """One candidate event for each row of ``configs``; updates in place."""
        B = len(configs)
        if B == 0:
            return np.zeros(0, dtype=bool)
        k = rng.integers(self.N, size=B)
        rows = np.arange(B)
        x = configs[rows, k]
        ids = self.idx.index(counts - self.eye[x])
        rates = self.q_off[x] + self.lam_tab[ids, x]
        cum = np.cumsum(rates, axis=1)
        if np.any(cum[:, -1] > self.rate * (1 + 1e-12)):
            raise AssertionError("acceptance probability exceeds one; majorant too small")
        u = rng.random(B) * self.rate
        move = u < cum[:, -1]
        y = np.argmax(u[:, None] < cum, axis=1)
        r = rows[move]
        counts[r, x[move]] -= 1
        counts[r, y[move]] += 1
        configs[r, k[move]] = y[move]
        return move


def _initial_configs(rho0, space: FiniteSpace, N: int, size: int, rng) -> np.ndarray:
    w = _density_values(rho0)
    d = space.d
    if w.shape == (d,):
        p = w * space.nu
        return rng.choice(d, size=(size, N), p=p / p.sum())
    if w.shape == (d**N,):
        p = w * product_nu(space, N)
        idx = rng.choice(d**N, size=size, p=p / p.sum())
        return all_configs(d, N)[idx]
    raise ValueError("rho0 must be a density on Pi or on Pi^N")


def simulate_particles(g: RateGenerator, kern: MeanFieldKernel, N: int, rho0, t_end: float,
                       seed: int, M_lambda: float | None = None) -> ParticleTrajectory:
    """One exact-in-law trajectory of the N-particle jump process by uniformization."""
    sampler = _Uniformizer(g, kern, N, M_lambda)
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    configs = _initial_configs(rho0, g.space, N, 1, rng)
    counts = np.stack([(configs == z).sum(axis=1) for z in range(g.space.d)], axis=1)
    n = rng.poisson(sampler.total_rate() * t_end)
    cand = np.sort(rng.random(n)) * t_end
    times, states = [0.0], [configs[0].copy()]
    for t in cand:
        if sampler.step(configs, counts, rng)[0]:
            times.append(float(t))
            states.append(configs[0].copy())
    return ParticleTrajectory(np.array(times), np.array(states), seed)


def simulate_replicas(g: RateGenerator, kern: MeanFieldKernel, N: int, rho0, t_end: float,
                      replicas: int, seed: int, chunk: int = 1 << 14,
                      M_lambda: float | None = None) -> np.ndarray:
    """Final configurations of independent replicas, shape ``(replicas, N)``.

    Replicas are processed in fixed-size chunks, each with its own stream derived from
    ``(seed, chunk index)``, so results do not depend on how chunks are scheduled.
    """
    sampler = _Uniformizer(g, kern, N, M_lambda)
    d = g.space.d
    out = np.empty((replicas, N), dtype=np.int64)
    for c0 in range(0, replicas, chunk):
        size = min(chunk, replicas - c0)
        rng = np.random.default_rng(np.random.SeedSequence([seed, c0 // chunk]))
        configs = _initial_configs(rho0, g.space, N, size, rng)
        counts = np.stack([(configs == z).sum(axis=1) for z in range(d)], axis=1)
        n_events = rng.poisson(sampler.total_rate() * t_end, size=size)
        for j in range(int(n_events.max()) if size else 0):
            act = np.nonzero(n_events > j)[0]
            sub_c, sub_n = configs[act], counts[act]
            sampler.step(sub_c, sub_n, rng)
            configs[act], counts[act] = sub_c, sub_n
        out[c0:c0 + size] = configs
    return out
