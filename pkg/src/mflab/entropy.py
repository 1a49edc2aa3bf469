"""Relative entropy, classical inequalities, the integral inequality and the chaos experiment."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp, rel_entr

from .defaults import DEFAULTS
from .dynamics import (EvolutionProblem, _density_values, _generator_curve, build_master_equation,
                       integrate_linear, master_trace, solve)
from .kernels import RateGenerator
from .models import MeanFieldKernel, intensity_sweep, verify_A3, verify_A4
from .space import FiniteSpace, as_tensor, from_tensor, oscillation, product_nu, tensorize

B_CONST = 1.0 / (11.0 * (3.0 / math.sqrt(2.0) + 2.5 * math.sqrt(1.5)))


def relative_entropy(rho, sigma, nu) -> float:
    """``sum rho log(rho / sigma) nu`` with ``0 log 0 = 0``; ``inf`` if rho is not dominated."""
    r, s = _density_values(rho), _density_values(sigma)
    return float(np.sum(rel_entr(r, s) * np.asarray(nu)))


def renormalized_entropy(rhoN, sigmaN, space: FiniteSpace, N: int) -> float:
    return relative_entropy(rhoN, sigmaN, product_nu(space, N)) / N


def marginal(rhoN, space: FiniteSpace, N: int, k: int, keep=None) -> np.ndarray:
    """Integrate a density on ``Pi^N`` against ``nu`` over all but ``k`` coordinates.

    ``keep`` lists the retained (0-based) coordinates; default is the first ``k``.
    """
    if not 1 <= k <= N:
        raise ValueError(f"k={k} out of range for N={N}")
    keep = list(range(k)) if keep is None else list(keep)
    if len(keep) != k:
        raise ValueError("keep must list exactly k coordinates")
    T = as_tensor(rhoN, space.d, N)
    for ax in sorted(set(range(N)) - set(keep), reverse=True):
        T = np.tensordot(T, space.nu, axes=([ax], [0]))
    remaining = sorted(keep)
    T = T.transpose([remaining.index(a) for a in keep])
    return from_tensor(T)


@dataclass(frozen=True)
class InequalityResult:
    lhs: float
    rhs: float

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs + 1e-12 * max(1.0, abs(self.rhs))


def pinsker_check(rho, sigma, nu) -> InequalityResult:
    r, s = _density_values(rho), _density_values(sigma)
    # H can round to a tiny negative value when rho and sigma agree
    return InequalityResult(float(np.abs(r - s) @ nu),
                            math.sqrt(2 * max(relative_entropy(r, s, nu), 0.0)))


def log_moment(phi, sigma, nu, eta: float) -> float:
    """``log sum exp(phi / eta) sigma nu``."""
    s = _density_values(sigma)
    return float(logsumexp(np.asarray(phi) / eta, b=s * nu))


def gibbs_check(phi, rho, sigma, nu, eta: float) -> InequalityResult:
    if eta <= 0:
        raise ValueError("eta must be positive")
    r = _density_values(rho)
    lhs = float(np.sum(np.asarray(phi) * r * nu))
    return InequalityResult(lhs, eta * (relative_entropy(r, sigma, nu) + log_moment(phi, sigma, nu, eta)))


def gibbs_optimizer(phi, sigma, nu, eta: float) -> np.ndarray:
    """The density proportional to ``sigma exp(phi / eta)``, where Gibbs' bound is attained."""
    s = _density_values(sigma)
    z = np.asarray(phi) / eta
    w = s * np.exp(z - z.max())
    return w / (w @ nu)


@dataclass
class DataProcessingResult:
    before: float
    after: float
    jensen_excess: float

    @property
    def ok(self) -> bool:
        return self.after <= self.before + 1e-12 * max(1.0, self.before) and self.jensen_excess <= 1e-10


def is_markov_operator(T, nu, tol: float = 1e-10) -> bool:
    """Nonnegative and mass preserving on densities: ``sum_y T[y, x] nu[y] = nu[x]``."""
    T = np.asarray(T)
    return bool(np.all(T >= 0) and np.allclose(nu @ T, nu, atol=tol, rtol=0))


def data_processing_check(t_op, rho, sigma, nu) -> DataProcessingResult:
    """Relative entropy before and after applying a Markov operator on densities, plus the
    pointwise Jensen check for ``u log u`` on the ``sigma``-normalized operator."""
    T = np.asarray(t_op, dtype=float)
    if not is_markov_operator(T, nu):
        raise ValueError("t_op must be nonnegative and mass preserving")
    r, s = _density_values(rho), _density_values(sigma)
    Tr, Ts = T @ r, T @ s
    before = relative_entropy(r, s, nu)
    after = relative_entropy(Tr, Ts, nu)
    pos = s > 0
    eta = np.zeros_like(r)
    eta[pos] = r[pos] / s[pos]
    psi = np.where(eta > 0, eta * np.log(np.where(eta > 0, eta, 1.0)), 0.0)
    out = Ts > 0
    teta = (T @ (eta * s))[out] / Ts[out]
    tphi = (T @ (psi * s))[out] / Ts[out]
    lhs = np.where(teta > 0, teta * np.log(np.where(teta > 0, teta, 1.0)), 0.0)
    excess = float(np.max(lhs - tphi)) if out.any() else 0.0
    scale = max(1.0, float(np.abs(tphi).max())) if out.any() else 1.0
    return DataProcessingResult(before, after, excess / scale)


# ---------------------------------------------------------------------------
# integral inequality


@dataclass
class IntegralInequalityReport:
    eta: float
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    sharp_rhs: np.ndarray
    budget: np.ndarray

    @property
    def ok(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs + self.budget)
                    and np.all(self.lhs <= self.sharp_rhs + self.budget))

    @property
    def worst_excess(self) -> float:
        return float(max(np.max(self.lhs - self.rhs - self.budget),
                         np.max(self.lhs - self.sharp_rhs - self.budget)))


def _cumtrapz(y, t):
    out = np.zeros_like(y)
    out[1:] = np.cumsum((y[1:] + y[:-1]) / 2 * np.diff(t))
    return out


def integral_inequality_check(g: RateGenerator, curveA, curveB, rho0, sigma0, etas,
                              t_end: float = 1.0, dt: float = 1e-3) -> list[IntegralInequalityReport]:
    """Entropy between two linear flows against the Gibbs-type integral bound.

    Both flows share ``K*``; they differ in their jump parts ``A*`` and ``B*``.  The
    s-integrals are trapezoid sums on the solver grid with budget ``10 dt^2`` per unit time.
    """
    nu = g.space.nu
    A, B = _generator_curve(g, curveA), _generator_curve(g, curveB)
    kstar = np.asarray(g.kstar)
    r0, s0 = _density_values(rho0), _density_values(sigma0)
    times, r = integrate_linear(lambda t: kstar + A(t), r0, t_end, dt)
    _, s = integrate_linear(lambda t: kstar + B(t), s0, t_end, dt)
    if s.min() <= DEFAULTS["clamp_tol"]:
        raise ValueError("sigma_t reached the clamp floor; log sigma is not bounded")
    r = np.maximum(r, 0.0)
    H = np.array([relative_entropy(ri, si, nu) for ri, si in zip(r, s)])
    phi = np.stack([(A(t) - B(t)) @ si / si for t, si in zip(times, s)])
    sharp = H[0] + _cumtrapz(np.sum(r * phi * nu, axis=1), times)
    h = times[1] - times[0] if len(times) > 1 else dt
    budget = DEFAULTS["quad_budget"] * h**2 * times
    reports = []
    for eta in np.atleast_1d(etas):
        lm = np.array([log_moment(p, si, nu, eta) for p, si in zip(phi, s)])
        rhs = H[0] + eta * _cumtrapz(H + lm, times)
        reports.append(IntegralInequalityReport(float(eta), times, H, rhs, sharp, budget))
    return reports


# ---------------------------------------------------------------------------
# constants of the entropy bound and the chaos experiment


@dataclass
class BetaConstants:
    """Constants entering the relative entropy bound.

    ``variant`` selects the first entry of the max defining ``C_T``:
    ``"standard"`` uses ``2 B M + M*``, ``"symmetric"`` uses ``2 (B M + M*)`` and
    ``"rigorous"`` uses ``2 (B M* + M)``, which dominates the oscillation of ``Phi``.
    """

    M_K: float
    M_lambda: float
    M_lambda_star: float
    theta: float
    delta0: float
    T: float
    variant: str = "standard"

    def __post_init__(self):
        if self.variant not in ("standard", "symmetric", "rigorous"):
            raise ValueError(f"unknown variant {self.variant!r}")
        vals = (self.M_K, self.M_lambda, self.M_lambda_star, self.theta, self.delta0, self.T)
        if min(vals) < 0 or not all(math.isfinite(v) for v in vals):
            raise ValueError("constants must be finite and nonnegative")

    @property
    def M(self) -> float:
        return self.M_K + self.M_lambda + self.M_lambda_star

    @property
    def B_T(self) -> float:
        return math.exp(self.delta0 + 2 * self.M * self.T)

    @property
    def phi0(self) -> float:
        B, m, ms = self.B_T, self.M_lambda, self.M_lambda_star
        return {"standard": 2 * B * m + ms, "symmetric": 2 * (B * m + ms),
                "rigorous": 2 * (B * ms + m)}[self.variant]

    @property
    def C_T(self) -> float:
        return max(self.phi0, self.theta * (self.B_T + 1))

    b = B_CONST

    @property
    def beta(self) -> float:
        return self.b / self.C_T if self.C_T > 0 else math.inf

    def bound(self, t, W0: float, N: int, horizon: bool = True):
        """``W0 exp(beta t) + (log 2 / N)(exp(beta s) - 1)/beta`` with ``s = T`` or ``s = t``."""
        t = np.asarray(t, dtype=float)
        beta = self.beta
        s = self.T if horizon else t
        if not math.isfinite(beta):
            return W0 + math.log(2) / N * np.broadcast_to(s, t.shape)
        return W0 * np.exp(beta * t) + math.log(2) / N * np.expm1(beta * s) / beta

    def gronwall_bound(self, t, W0: float, N: int):
        """Bound from ``W' <= (C_T/b)(W + log2/N)``, keeping the Gibbs parameter ``C_T/b``."""
        rate = self.C_T / self.b
        t = np.asarray(t, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            out = W0 * np.exp(rate * t) + math.log(2) / N * np.expm1(rate * t)
        return np.where(np.isfinite(out), out, np.inf)

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(M=self.M, B_T=self.B_T, C_T=self.C_T, b=self.b, beta=self.beta)
        return out


@dataclass
class EntropyTrace:
    N: int
    times: np.ndarray
    values: np.ndarray
    bound: np.ndarray
    constants: BetaConstants
    marginal_gaps: dict = field(default_factory=dict)

    @property
    def sup_W(self) -> float:
        return float(self.values.max())

    @property
    def sup_NW(self) -> float:
        return self.N * self.sup_W

    @property
    def excess(self) -> float:
        return float(np.max(self.values - self.bound))

    @property
    def status(self) -> str:
        if self.excess <= DEFAULTS["entropy_soft_tol"]:
            return "ok"
        return "within-tolerance" if self.excess <= DEFAULTS["entropy_hard_tol"] else "violated"

    @property
    def bound_ok(self) -> bool:
        return self.status != "violated"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "W", "bound"])
            for t, v, b in zip(self.times, self.values, self.bound):
                w.writerow([repr(float(t)), repr(float(v)), repr(float(b))])


@dataclass
class ChaosReport:
    traces: dict
    constants: dict
    verified: dict

    def summary(self) -> dict:
        per_n = {str(N): {"sup_W": tr.sup_W, "sup_NW": tr.sup_NW, "bound_ok": tr.bound_ok,
                          "status": tr.status, "max_excess": tr.excess}
                 for N, tr in self.traces.items()}
        return {"per_N": per_n,
                "beta_constants": {N: c.as_dict() for N, c in self.constants.items()},
                "verified": self.verified}


def model_constants(g: RateGenerator, kern: MeanFieldKernel, N: int, rho0bar, T: float,
                    source: str = "verified", variant: str = "standard") -> BetaConstants:
    """Assemble the bound constants, from exhaustive sweeps or from declared values."""
    delta0 = oscillation(np.log(_density_values(rho0bar)))
    if source == "verified":
        sw = intensity_sweep(kern, N)
        theta = verify_A3(kern, N).theta_hat
        if N >= 3:
            theta = max(theta, verify_A4(kern, N).theta_hat)
        ml, mls = sw.M_lambda_hat, sw.M_lambda_star_hat
    elif source == "declared":
        c = kern.constants
        if None in (c.M_lambda, c.M_lambda_star, c.theta):
            raise ValueError("kernel does not declare all constants")
        ml, mls, theta = c.M_lambda, c.M_lambda_star, c.theta
    else:
        raise ValueError(f"unknown source {source!r}")
    return BetaConstants(g.M_K, ml, mls, theta, delta0, T, variant)


def _log_or_none(v):
    v = float(v)
    return math.log(v) if 0 < v < math.inf else None


def chaos_experiment(g: RateGenerator, kern: MeanFieldKernel, rho0bar, N_list, T: float,
                     dt: float = 1e-2, rho0N=None, source: str = "verified",
                     variant: str = "standard", cap: int | None = None,
                     marginal_k=(1, 2)) -> ChaosReport:
    """Exact N-particle entropy against the tensorized averaged evolution.

    For each N the averaged equation is solved on the grid, the master equation is
    propagated with its exact one-step map, and ``W_N(t) = H(rho_t | rhobar_t^N) / N``
    is compared with the bound assembled from :class:`BetaConstants`.
    """
    space = g.space
    rho0bar = _density_values(rho0bar)
    traces, consts, verified = {}, {}, {}
    for N in N_list:
        me = build_master_equation(g, kern, N, cap)
        avg = solve(EvolutionProblem(g, kern, rho0bar, T, dt, "averaged", N=N))
        init = tensorize(rho0bar, N) if rho0N is None else np.asarray(rho0N(N) if callable(rho0N) else rho0N)
        times, rhoN = master_trace(me, init, T, dt)
        nuN = product_nu(space, N)
        W = np.empty(len(times))
        gaps = {k: np.empty(len(times)) for k in marginal_k if k <= N}
        for i in range(len(times)):
            bar = tensorize(avg.densities[i], N)
            W[i] = relative_entropy(rhoN[i], bar, nuN) / N
            for k in gaps:
                mk = marginal(rhoN[i], space, N, k)
                gaps[k][i] = float(np.abs(mk - tensorize(avg.densities[i], k)) @ product_nu(space, k))
        c = model_constants(g, kern, N, rho0bar, T, source, variant)
        W0 = float(W[0])
        bound = c.bound(times, W0, N, horizon=True)
        marg = {k: {"sup_l1_gap": float(v.max()),
                    "pinsker_chain": float(math.sqrt(2 * k * W.max()))} for k, v in gaps.items()}
        traces[N] = EntropyTrace(N, times, W, np.asarray(bound), c, marg)
        consts[N] = c
        verified[N] = {"M_lambda": c.M_lambda, "M_lambda_star": c.M_lambda_star,
                       "theta": c.theta, "gronwall_rate": c.C_T / c.b,
                       "gronwall_log_bound_at_T": _log_or_none(c.gronwall_bound(T, W0, N)),
                       "gronwall_bound_finite": bool(np.isfinite(c.gronwall_bound(T, W0, N)))}
    return ChaosReport(traces, consts, verified)
