"""Random spaces, kernels and densities for property checks and sweeps."""
from __future__ import annotations

import numpy as np

from .kernels import JumpKernel, RateGenerator
from .models import Intensity, ParametrizedKernel, TwoThreeBodyKernel
from .space import FiniteSpace


def random_space(rng, d: int, lo: float = 0.5, hi: float = 2.0) -> FiniteSpace:
    return FiniteSpace(rng.uniform(lo, hi, size=d))


def random_lam(rng, d: int, scale: float = 1.0, density: float = 0.8) -> np.ndarray:
    lam = rng.uniform(0, scale, size=(d, d)) * (rng.random((d, d)) < density)
    np.fill_diagonal(lam, 0.0)
    return lam


def random_kernel(rng, space: FiniteSpace, scale: float = 1.0) -> JumpKernel:
    return JumpKernel(space, random_lam(rng, space.d, scale))


def random_generator(rng, space: FiniteSpace, scale: float = 1.0) -> RateGenerator:
    return RateGenerator.from_rates(space, random_lam(rng, space.d, scale))


def random_density(rng, space: FiniteSpace, floor: float = 0.0, alpha: float = 1.0) -> np.ndarray:
    """Probability density whose masses are Dirichlet(alpha) mixed with ``floor``."""
    m = rng.dirichlet(np.full(space.d, alpha))
    m = (1 - floor * space.d) * m + floor if floor > 0 else m
    return m / space.nu


def random_two_three_body(rng, space: FiniteSpace, scale: float = 1.0,
                          three_body: bool = False) -> TwoThreeBodyKernel:
    d = space.d
    g1 = rng.uniform(0, scale, size=(d, d, d))
    g2 = rng.uniform(0, scale, size=(d, d, d, d)) if three_body else None
    idx = np.arange(d)
    g1[idx, :, idx] = 0.0
    if g2 is not None:
        g2[idx, :, :, idx] = 0.0
    return TwoThreeBodyKernel(space, g1, g2)


def random_parametrized(rng, space: FiniteSpace, k: int = 1, name: str = "logistic",
                        scale: float = 1.0) -> ParametrizedKernel:
    d = space.d
    kappa = rng.uniform(-1, 1, size=(d, d, k))
    P = rng.uniform(0, 1, size=(d, d))
    np.fill_diagonal(P, 0.0)
    if name == "logistic":
        params = {"scale": scale, "a": float(rng.normal()), "b": rng.normal(size=k).tolist()}
    elif name == "exp-neg":
        params = {"scale": scale, "c": float(rng.uniform(0.2, 2.0))}
    else:
        params = {"a": 0.5 * scale, "b": rng.normal(size=k).tolist(), "lo": 0.1 * scale, "hi": scale}
    return ParametrizedKernel(space, kappa, Intensity(name, params), P)


def random_markov_operator(rng, space: FiniteSpace) -> np.ndarray:
    """Nonnegative mass-preserving matrix on densities built from a row-stochastic matrix."""
    P = rng.dirichlet(np.ones(space.d), size=space.d)
    nu = space.nu
    return P.T * nu[None, :] / nu[:, None]
