"""Jump kernels, adjoints, generators and operator norms on a finite space."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .space import Density, FiniteSpace, _frozen, _vec


@dataclass(frozen=True, eq=False)
class JumpKernel:
    """Markov jump kernel: ``lam[x, y]`` is the jump rate mass from x to y (zero diagonal)."""

    space: FiniteSpace
    lam: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        d = self.space.d
        if lam.shape != (d, d):
            raise ValueError(f"kernel has shape {lam.shape}, expected ({d}, {d})")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("kernel entries must be finite and nonnegative")
        if np.any(np.diag(lam) != 0):
            warnings.warn("nonzero diagonal of a jump kernel set to zero", stacklevel=3)
            np.fill_diagonal(lam, 0.0)
        object.__setattr__(self, "lam", _frozen(lam))

    @property
    def intensity(self) -> np.ndarray:
        """Total jump rate ``Lambda(x, Pi)`` out of each atom."""
        return self.lam.sum(axis=1)

    @property
    def norm(self) -> float:
        return float(self.intensity.max())

    def adjoint(self) -> "JumpKernel":
        return adjoint_kernel(self)

    def adjoint_generator(self) -> np.ndarray:
        """Matrix of the adjoint generator acting on density vectors."""
        return adjoint_matrix(self.lam, self.space.nu)

    def generator(self) -> np.ndarray:
        return self.lam - np.diag(self.intensity)

    def to_json(self) -> dict:
        return {"lam": self.lam.tolist()}

    @classmethod
    def from_json(cls, space, obj) -> "JumpKernel":
        return cls(space, np.asarray(obj["lam"], dtype=float))


def adjoint_lam(lam: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """``lam_star[y, x] = lam[x, y] nu[x] / nu[y]``; works on stacked kernels too."""
    return np.swapaxes(lam, -1, -2) * nu[None, :] / nu[:, None]


def adjoint_matrix(lam: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Adjoint generator ``rho -> Lambda* rho - Lambda(., Pi) rho`` as a (stack of) matrices."""
    out = adjoint_lam(lam, nu)
    idx = np.arange(lam.shape[-1])
    out[..., idx, idx] -= lam.sum(axis=-1)
    return out


def adjoint_kernel(k: JumpKernel) -> JumpKernel:
    return JumpKernel(k.space, adjoint_lam(k.lam, k.space.nu))


def jump_gen_apply(k: JumpKernel, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (k.space.d,):
        raise ValueError("dimension mismatch")
    return k.lam @ phi - k.intensity * phi


def adjoint_gen_apply(k: JumpKernel, kadj: JumpKernel | None, rho) -> np.ndarray:
    rho = _vec(rho)
    if rho.shape != (k.space.d,):
        raise ValueError("dimension mismatch")
    if kadj is None:
        kadj = adjoint_kernel(k)
    return kadj.lam @ rho - k.intensity * rho


def kernel_distance(a: JumpKernel, b: JumpKernel) -> float:
    if a.space != b.space:
        raise ValueError("kernels live on different spaces")
    return float(np.abs(a.lam - b.lam).sum(axis=1).max())


def l1_operator_norm(A: np.ndarray, nu: np.ndarray) -> float:
    """Exact norm of ``A`` on L^1(nu), from the extreme points ``delta_x / nu[x]``."""
    return float(((np.abs(A) * nu[:, None]).sum(axis=0) / nu).max())


def linf_operator_norm(A: np.ndarray) -> float:
    return float(np.abs(A).sum(axis=1).max())


@dataclass(frozen=True)
class AdjointBoundReport:
    lhs: float
    middle: float
    rhs: float

    @property
    def ok(self) -> bool:
        scale = max(1.0, self.rhs)
        return self.lhs <= self.middle + 1e-12 * scale and self.middle <= self.rhs + 1e-12 * scale


def adjoint_op_bound_check(a: JumpKernel, b: JumpKernel, rho) -> AdjointBoundReport:
    """Compare adjoint generators of two kernels applied to the same density.

    Returns the L^1 distance of the outputs, the weighted row-distance integral and
    the crude bound ``2 * dist(a, b) * ||rho||_1``.
    """
    nu = a.space.nu
    rho = _vec(rho)
    diff = adjoint_gen_apply(a, None, rho) - adjoint_gen_apply(b, None, rho)
    rows = np.abs(a.lam - b.lam).sum(axis=1)
    lhs = float(np.abs(diff) @ nu)
    middle = float(2 * np.sum(rows * np.abs(rho) * nu))
    rhs = 2 * kernel_distance(a, b) * float(np.abs(rho) @ nu)
    return AdjointBoundReport(lhs, middle, rhs)


@dataclass(frozen=True, eq=False)
class RateGenerator:
    """Forward rate matrix ``q`` of a continuous-time chain and its adjoint on densities."""

    space: FiniteSpace
    q: np.ndarray
    kstar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        d = self.space.d
        if q.shape != (d, d):
            raise ValueError(f"rate matrix has shape {q.shape}, expected ({d}, {d})")
        off = q - np.diag(np.diag(q))
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be nonnegative")
        if not np.allclose(q.sum(axis=1), 0.0, atol=1e-12 * max(1.0, np.abs(q).max())):
            raise ValueError("rows of a rate matrix must sum to zero")
        np.fill_diagonal(q, -off.sum(axis=1))
        nu = self.space.nu
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "kstar", _frozen(q.T * nu[None, :] / nu[:, None]))

    @classmethod
    def zero(cls, space: FiniteSpace) -> "RateGenerator":
        return cls(space, np.zeros((space.d, space.d)))

    @classmethod
    def from_rates(cls, space: FiniteSpace, rates) -> "RateGenerator":
        rates = np.array(rates, dtype=float)
        np.fill_diagonal(rates, 0.0)
        np.fill_diagonal(rates, -rates.sum(axis=1))
        return cls(space, rates)

    @property
    def M_K(self) -> float:
        """Sup norm of the adjoint generator applied to the constant function 1."""
        return float(np.abs(self.kstar.sum(axis=1)).max())

    @property
    def max_exit_rate(self) -> float:
        return float(np.abs(np.diag(self.q)).max())

    def apply(self, rho) -> np.ndarray:
        return self.kstar @ _vec(rho)

    def to_json(self) -> dict:
        return {"q": self.q.tolist()}

    @classmethod
    def from_json(cls, space, obj) -> "RateGenerator":
        return cls(space, np.asarray(obj["q"], dtype=float))


def semigroup(A: np.ndarray, t: float) -> np.ndarray:
    """``exp(t A)`` by scaling and squaring with a degree-13 Pade approximant."""
    return scipy.linalg.expm(t * np.asarray(A, dtype=float))


def resolvent_smooth(g: RateGenerator, rho, lam: float) -> Density:
    """Scaled resolvent ``lam (lam I - K*)^{-1} rho``."""
    w = _vec(rho)
    A = lam * np.eye(g.space.d) - g.kstar
    try:
        out = np.linalg.solve(A, lam * w)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"resolvent is singular at lambda={lam}") from exc
    out = np.where(np.abs(out) < 1e-15, 0.0, out)
    return Density(g.space, np.maximum(out, 0.0), probability=False)


@dataclass
class ValidationReport:
    valid: bool
    violations: list

    def __bool__(self):
        return self.valid


def validate_adjoint_markov(matrix, space: FiniteSpace, n_random: int = 200,
                            seed: int = 0, tol: float = 1e-10) -> ValidationReport:
    """Check that ``matrix`` (acting on densities) conserves mass and obeys the
    positive maximum principle ``sum_{rho>0} (M rho) nu <= 0``."""
    M = np.asarray(matrix, dtype=float)
    nu = space.nu
    d = space.d
    violations = []
    if M.shape != (d, d):
        return ValidationReport(False, [("shape", M.shape)])
    scale = max(1.0, float(np.abs(M).max()))
    for x in range(d):
        e = np.zeros(d)
        e[x] = 1.0 / nu[x]
        mass = float((M @ e) @ nu)
        if abs(mass) > tol * scale:
            violations.append(("mass", x, mass))
    rng = np.random.default_rng(seed)
    probes = [np.eye(d)[x] for x in range(d)]
    probes += list(rng.normal(size=(n_random, d)))
    for rho in probes:
        pos = rho > 0
        val = float(((M @ rho) * nu)[pos].sum())
        if val > tol * scale * max(1.0, np.abs(rho).max()):
            violations.append(("max-principle", tuple(np.round(rho, 12)), val))
    return ValidationReport(not violations, violations)
