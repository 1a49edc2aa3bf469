import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mflab.models import (AveragedKernel, ConstantKernel, Intensity, ParametrizedKernel,
                          TwoThreeBodyKernel, averaged_kernel, epsilon_N, epsilon_N_exact,
                          intensity_sweep, lipschitz_sweep, verify_A3, verify_A4)
from mflab.random_models import random_lam, random_parametrized, random_two_three_body
from mflab.space import CompositionIndex, FiniteSpace, empirical_of

from .conftest import seeds, spaces


def _brute_empirical(kern, particles):
    """Kernel seen by a tagged particle from an explicit list of the others."""
    n = len(particles)
    out = sum(kern.gamma1[:, z, :] for z in particles) / n
    if kern.has_three_body:
        pairs = [(a, b) for k, a in enumerate(particles) for l, b in enumerate(particles) if k != l]
        out = out + sum(kern.gamma2[:, a, b, :] for a, b in pairs) / (n * (n - 1))
    return out


@pytest.mark.parametrize("d,n", [(2, 2), (2, 4), (3, 3), (3, 4)])
def test_two_three_body_matches_index_sum(d, n):
    rng = np.random.default_rng(d * 10 + n)
    kern = random_two_three_body(rng, FiniteSpace(rng.uniform(0.5, 2, d)), three_body=True)
    for parts in itertools.product(range(d), repeat=n):
        counts = empirical_of(parts, d).counts
        np.testing.assert_allclose(kern.empirical_lam(counts)[0], _brute_empirical(kern, parts),
                                   rtol=1e-12, atol=1e-14)


def test_single_interaction_collapse():
    rng = np.random.default_rng(1)
    kern = random_two_three_body(rng, FiniteSpace.uniform(3))
    np.testing.assert_allclose(kern.empirical_lam(np.array([0, 4, 0]))[0], kern.gamma1[:, 1, :])
    kern3 = random_two_three_body(rng, FiniteSpace.uniform(3), three_body=True)
    all_z = kern3.empirical_lam(np.array([0, 0, 5]))[0]
    np.testing.assert_allclose(all_z, kern3.gamma1[:, 2, :] + kern3.gamma2[:, 2, 2, :])


def test_three_body_needs_two_partners():
    rng = np.random.default_rng(2)
    kern = random_two_three_body(rng, FiniteSpace.uniform(2), three_body=True)
    with pytest.raises(ValueError):
        kern.empirical_lam(np.array([1, 0]))
    two = random_two_three_body(rng, FiniteSpace.uniform(2))
    assert two.empirical_lam(np.array([1, 0])).shape == (1, 2, 2)


def test_declared_c1_checked():
    g1 = np.zeros((2, 2, 2))
    g1[0, 0, 1] = 2.0
    with pytest.raises(ValueError):
        TwoThreeBodyKernel(FiniteSpace.uniform(2), g1, c1=1.0)


def test_permutation_blindness():
    rng = np.random.default_rng(3)
    sp = FiniteSpace(np.array([0.5, 1.0, 2.0]))
    kerns = [random_two_three_body(rng, sp, three_body=True), random_parametrized(rng, sp, k=2)]
    for kern in kerns:
        for parts in itertools.product(range(3), repeat=4):
            a = kern.empirical_lam(empirical_of(parts, sp).counts)
            b = kern.empirical_lam(empirical_of(parts[::-1], sp).counts)
            np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("seed", range(5))
def test_two_three_body_condition_sweeps(seed):
    rng = np.random.default_rng(seed)
    kern = random_two_three_body(rng, FiniteSpace(rng.uniform(0.5, 2, 2)), three_body=True)
    assert verify_A3(kern, 4).theta_hat <= 6 * kern.c1 + 1e-12
    assert verify_A4(kern, 4).theta_hat <= 4 * kern.c1 + 1e-12


def test_affine_kernels_have_no_second_difference():
    rng = np.random.default_rng(4)
    kern = random_two_three_body(rng, FiniteSpace.uniform(3))
    assert verify_A4(kern, 5).theta_hat <= 1e-13
    const = ConstantKernel(FiniteSpace.uniform(3), random_lam(rng, 3))
    assert verify_A3(const, 5).theta_hat == 0
    assert verify_A4(const, 5).theta_hat == 0


def test_sampled_sweep_below_exhaustive():
    rng = np.random.default_rng(5)
    kern = random_parametrized(rng, FiniteSpace.uniform(3), k=2)
    ex, sa = verify_A3(kern, 6), verify_A3(kern, 6, mode="sampled", samples=300)
    assert sa.theta_hat <= ex.theta_hat + 1e-12
    ex4, sa4 = verify_A4(kern, 6), verify_A4(kern, 6, mode="sampled", samples=300)
    assert sa4.theta_hat <= ex4.theta_hat + 1e-12
    assert ex.witnesses["kernel"] in ("lambda", "lambda_star")


def test_A4_rejects_small_N():
    with pytest.raises(ValueError):
        verify_A4(random_parametrized(np.random.default_rng(0), FiniteSpace.uniform(2)), 2)


@pytest.mark.parametrize("name", ["logistic", "exp-neg", "affine-clamped"])
@pytest.mark.parametrize("seed", range(3))
def test_parametrized_declared_constants(name, seed):
    rng = np.random.default_rng(seed)
    sp = FiniteSpace(rng.uniform(0.5, 2, 3))
    kern = random_parametrized(rng, sp, k=2, name=name)
    c = kern.constants
    sw = intensity_sweep(kern)
    assert sw.M_lambda_hat <= c.M_lambda + 1e-12
    assert sw.M_lambda_star_hat <= c.M_lambda_star + 1e-12
    assert lipschitz_sweep(kern) <= c.lipschitz_L1 * (1 + 1e-9)
    for N in (3, 6):
        assert verify_A3(kern, N).theta_hat <= 2 * c.lipschitz_L1 * (1 + 1e-9)
        if c.theta is not None:
            assert verify_A3(kern, N).theta_hat <= c.theta * (1 + 1e-9)
            assert verify_A4(kern, N).theta_hat <= c.theta * (1 + 1e-9)


def test_parametrized_zero_kappa_is_constant():
    rng = np.random.default_rng(6)
    sp = FiniteSpace.uniform(3)
    kern = ParametrizedKernel(sp, np.zeros((3, 3, 1)),
                              Intensity("logistic", {"scale": 1.0, "a": 0.3, "b": [1.0]}),
                              rng.uniform(0, 1, (3, 3)))
    masses = rng.dirichlet(np.ones(3), size=5)
    lam = kern.eval_batch(masses)
    np.testing.assert_allclose(lam, np.broadcast_to(lam[0], lam.shape))
    assert verify_A3(kern, 4).theta_hat == 0
    assert epsilon_N(kern, [0.2, 0.3, 0.5], 5, samples=200).estimate == 0


@given(seeds())
def test_young_bound(seed):
    rng = np.random.default_rng(seed)
    sp = FiniteSpace(rng.uniform(0.5, 2, 4))
    kern = random_parametrized(rng, sp, k=3)
    for _ in range(200):
        a, b = rng.dirichlet(np.ones(4), size=2)
        diff = np.linalg.norm(kern.theta_of(a) - kern.theta_of(b), axis=-1).max()
        assert diff <= kern.m1 * np.abs(a - b).sum() + 1e-12


def test_factorized_form():
    rng = np.random.default_rng(7)
    sp = FiniteSpace(np.array([0.5, 1.0, 2.0]))
    kern = random_parametrized(rng, sp, k=2)
    m = rng.dirichlet(np.ones(3))
    lam = kern.eval_lam(m)
    rates = kern.intensity(kern.theta_of(m))[0]
    np.testing.assert_allclose(lam, rates[:, None] * kern.P * sp.nu[None, :])


@pytest.mark.parametrize("name", ["logistic", "exp-neg", "affine-clamped"])
def test_intensity_constants_by_finite_differences(name):
    rng = np.random.default_rng(8)
    params = {"logistic": {"scale": 2.0, "a": 0.1, "b": [1.0, -2.0]},
              "exp-neg": {"scale": 1.5, "c": 0.7, "center": [0.2, -0.1]},
              "affine-clamped": {"a": 0.5, "b": [1.0, 2.0], "lo": 0.1, "hi": 2.0}}[name]
    f = Intensity(name, params)
    th = rng.normal(size=(5000, 2)) * 2
    assert f(th).max() <= f.sup(2) + 1e-12 and f(th).min() >= 0
    dth = rng.normal(size=(5000, 2)) * 1e-3
    ratio = np.abs(f(th + dth) - f(th)) / np.linalg.norm(dth, axis=1)
    assert ratio.max() <= f.lipschitz(2) * (1 + 1e-6)
    if f.curvature(2) is not None:
        h = 1e-3
        u = rng.normal(size=(5000, 2))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        second = np.abs(f(th + h * u) - 2 * f(th) + f(th - h * u)) / h**2
        assert second.max() <= f.curvature(2) * (1 + 1e-3)


def test_averaged_constant_and_point_mass():
    rng = np.random.default_rng(9)
    sp = FiniteSpace(np.array([0.5, 1.0, 2.0]))
    const = ConstantKernel(sp, random_lam(rng, 3))
    np.testing.assert_allclose(averaged_kernel(const, [0.2, 0.3, 0.5], 4).lam, const.lam)
    kern = random_parametrized(rng, sp, k=2)
    np.testing.assert_allclose(averaged_kernel(kern, [0, 1, 0], 5).lam,
                               kern.empirical_lam(np.array([0, 4, 0]))[0], atol=1e-14)


def test_averaged_two_body_closed_form():
    rng = np.random.default_rng(10)
    sp = FiniteSpace(rng.uniform(0.5, 2, 3))
    kern = random_two_three_body(rng, sp, three_body=True)
    m = rng.dirichlet(np.ones(3))
    np.testing.assert_allclose(averaged_kernel(kern, m, 5).lam, kern.averaged_closed_form(m).lam,
                               rtol=1e-10, atol=1e-12)


def test_averaged_monte_carlo_fallback():
    rng = np.random.default_rng(11)
    kern = random_parametrized(rng, FiniteSpace.uniform(3), k=1)
    with pytest.raises(OverflowError):
        AveragedKernel(kern, 30, mc_threshold=10)
    mc = AveragedKernel(kern, 30, monte_carlo=True, mc_threshold=10, mc_samples=20000)
    exact = AveragedKernel(kern, 30)
    m = np.array([0.2, 0.5, 0.3])
    assert np.abs(mc.eval_lam(m) - exact.eval_lam(m)).max() < 0.02


@given(seeds(), st.integers(2, 6))
def test_averaged_kernel_lipschitz_in_rho(seed, N):
    rng = np.random.default_rng(seed)
    sp = FiniteSpace(rng.uniform(0.5, 2, 3))
    kern = random_parametrized(rng, sp, k=2)
    avg = AveragedKernel(kern, N)
    a, b = rng.dirichlet(np.ones(3), size=2)
    lhs = np.abs(avg.eval_lam(a) - avg.eval_lam(b)).sum(axis=1).max()
    M = intensity_sweep(kern, N).M_lambda_hat
    assert lhs <= (N - 1) * M * np.abs(a - b).sum() + 1e-12


def test_epsilon_bound_example():
    # m1 = 1 and nu(Pi) = 1; the logistic slope keeps m2 below one
    sp = FiniteSpace(np.array([0.5, 0.5]))
    kappa = np.zeros((2, 2, 1))
    kappa[:, 0, 0] = 1.0
    kern = ParametrizedKernel(sp, kappa, Intensity("logistic", {"scale": 1.0, "a": 0.0, "b": [1.0]}),
                              np.array([[0, 1.0], [1.0, 0]]))
    assert kern.m1 == 1 and sp.total_mass == 1
    est = epsilon_N(kern, [0.4, 0.6], 101, samples=5000, seed=1)
    assert est.estimate <= 0.1 + 3 * est.std_error
    assert est.ok
    assert abs(est.estimate - epsilon_N_exact(kern, [0.4, 0.6], 101)) <= 4 * est.std_error


def test_epsilon_requires_samples():
    kern = random_parametrized(np.random.default_rng(0), FiniteSpace.uniform(2))
    with pytest.raises(ValueError):
        epsilon_N(kern, [0.5, 0.5], 5, samples=10)


def test_eval_matches_empirical_for_parametrized():
    rng = np.random.default_rng(12)
    kern = random_parametrized(rng, FiniteSpace.uniform(3), k=2)
    idx = CompositionIndex(3, 4)
    np.testing.assert_allclose(kern.empirical_lam(idx.counts), kern.eval_batch(idx.counts / 4))
