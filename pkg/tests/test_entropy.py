import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mflab.dynamics import build_master_equation, solve_master
from mflab.entropy import (B_CONST, BetaConstants, chaos_experiment, data_processing_check,
                           gibbs_check, gibbs_optimizer, integral_inequality_check, is_markov_operator,
                           log_moment, marginal, pinsker_check, relative_entropy,
                           renormalized_entropy)
from mflab.kernels import semigroup
from mflab.models import ConstantKernel
from mflab.random_models import (random_density, random_generator, random_lam,
                                 random_markov_operator, random_space)
from mflab.space import FiniteSpace, product_nu, tensorize, tensorize_list

from .conftest import seeds, spaces


def test_relative_entropy_examples():
    nu = np.ones(2)
    assert relative_entropy([0.8, 0.2], [0.5, 0.5], nu) == pytest.approx(
        0.8 * math.log(1.6) + 0.2 * math.log(0.4))
    assert relative_entropy([0.8, 0.2], [0.5, 0.5], nu) == pytest.approx(0.19274, abs=1e-5)
    assert relative_entropy([0.5, 0.5], [0.5, 0.5], nu) == 0
    assert relative_entropy([0.5, 0.5], [1.0, 0.0], nu) == math.inf
    assert relative_entropy([1.0, 0.0], [0.5, 0.5], nu) == pytest.approx(math.log(2))


def test_b_constant():
    assert B_CONST == pytest.approx(1 / (11 * (3 / math.sqrt(2) + 2.5 * math.sqrt(1.5))))
    assert B_CONST == pytest.approx(0.017539, abs=1e-6)
    assert round(B_CONST, 4) == 0.0175


@given(spaces(d_max=4), seeds(), st.integers(1, 3))
def test_entropy_tensorization(space, seed, N):
    rng = np.random.default_rng(seed)
    r, s = random_density(rng, space), random_density(rng, space, floor=0.01)
    H = relative_entropy(r, s, space.nu)
    assert H >= -1e-15
    assert renormalized_entropy(tensorize(r, N), tensorize(s, N), space, N) == pytest.approx(
        H, rel=1e-9, abs=1e-12)
    assert renormalized_entropy(tensorize(s, N), tensorize(s, N), space, N) == 0


@given(seeds())
def test_entropy_additivity_and_marginal_monotonicity(seed):
    rng = np.random.default_rng(seed)
    sp = random_space(rng, 3)
    rs = [random_density(rng, sp) for _ in range(3)]
    ss = [random_density(rng, sp, floor=0.01) for _ in range(3)]
    joint = relative_entropy(tensorize_list(rs), tensorize_list(ss), product_nu(sp, 3))
    assert joint == pytest.approx(sum(relative_entropy(r, s, sp.nu) for r, s in zip(rs, ss)),
                                  rel=1e-9, abs=1e-12)
    rhoN = rng.uniform(0, 1, 27)
    rhoN /= rhoN @ product_nu(sp, 3)
    sigN = tensorize(ss[0], 3)
    for k in (1, 2):
        Hk = relative_entropy(marginal(rhoN, sp, 3, k), tensorize(ss[0], k), product_nu(sp, k))
        assert Hk <= relative_entropy(rhoN, sigN, product_nu(sp, 3)) + 1e-12


def test_marginal_examples():
    rng = np.random.default_rng(0)
    sp = FiniteSpace(np.array([0.5, 1.0, 2.0]))
    rs = [random_density(rng, sp) for _ in range(3)]
    prod = tensorize_list(rs)
    np.testing.assert_allclose(marginal(prod, sp, 3, 1), rs[0])
    np.testing.assert_allclose(marginal(prod, sp, 3, 2), tensorize_list(rs[:2]))
    np.testing.assert_allclose(marginal(prod, sp, 3, 1, keep=[2]), rs[2])
    np.testing.assert_array_equal(marginal(prod, sp, 3, 3), prod)
    with pytest.raises(ValueError):
        marginal(prod, sp, 3, 0)


def test_marginal_of_symmetric_density():
    rng = np.random.default_rng(1)
    sp = FiniteSpace(np.array([0.5, 1.5]))
    N = 3
    base = rng.uniform(0, 1, (2,) * N)
    sym = sum(base.transpose(p) for p in itertools.permutations(range(N)))
    from mflab.space import from_tensor
    rhoN = from_tensor(sym)
    rhoN /= rhoN @ product_nu(sp, N)
    for k in (1, 2):
        ref = marginal(rhoN, sp, N, k)
        for keep in itertools.permutations(range(N), k):
            np.testing.assert_allclose(marginal(rhoN, sp, N, k, keep=list(keep)), ref, atol=1e-14)


def test_pinsker_examples():
    rng = np.random.default_rng(2)
    sp = FiniteSpace(np.array([0.5, 1.0, 2.0]))
    r = random_density(rng, sp)
    res = pinsker_check(r, r, sp.nu)
    assert res.lhs == 0 and res.rhs == 0 and res.ok
    for eps in (1e-2, 1e-4, 1e-8):
        s = np.array([1 - 2 * eps, eps, eps]) / sp.nu
        res = pinsker_check(r, s, sp.nu)
        assert res.ok and res.rhs > 1


@given(spaces(d_max=8), seeds())
def test_pinsker_random(space, seed):
    rng = np.random.default_rng(seed)
    assert pinsker_check(random_density(rng, space, alpha=0.5), random_density(rng, space),
                         space.nu).ok


@given(spaces(d_max=8), seeds(), st.floats(0.05, 20))
def test_gibbs_random_and_equality(space, seed, eta):
    rng = np.random.default_rng(seed)
    r, s = random_density(rng, space), random_density(rng, space, floor=0.01)
    phi = rng.normal(size=space.d) * 3
    assert gibbs_check(phi, r, s, space.nu, eta).ok
    opt = gibbs_check(phi, gibbs_optimizer(phi, s, space.nu, eta), s, space.nu, eta)
    assert abs(opt.lhs - opt.rhs) <= 1e-9 * max(1.0, abs(opt.rhs))


def test_gibbs_examples():
    rng = np.random.default_rng(3)
    sp = FiniteSpace(np.array([0.5, 1.0, 2.0]))
    r, s = random_density(rng, sp), random_density(rng, sp)
    res = gibbs_check(np.zeros(3), r, s, sp.nu, 0.7)
    assert res.lhs == 0 and res.rhs >= 0
    phi = rng.normal(size=3)
    # with rho = sigma the bound is Jensen for the log-moment
    assert np.sum(phi * s * sp.nu) <= 0.7 * log_moment(phi, s, sp.nu, 0.7) + 1e-12
    with pytest.raises(ValueError):
        gibbs_check(phi, r, s, sp.nu, 0.0)


def test_data_processing_examples():
    rng = np.random.default_rng(4)
    sp = FiniteSpace(np.array([0.5, 1.0, 2.0]))
    r, s = random_density(rng, sp), random_density(rng, sp, floor=0.05)
    ident = data_processing_check(np.eye(3), r, s, sp.nu)
    assert ident.after == pytest.approx(ident.before) and ident.ok
    # rank-one map onto sigma: every density goes to sigma
    proj = np.outer(s, sp.nu)
    assert is_markov_operator(proj, sp.nu)
    res = data_processing_check(proj, r, s, sp.nu)
    assert res.after == pytest.approx(0, abs=1e-14) and res.ok
    with pytest.raises(ValueError):
        data_processing_check(2 * np.eye(3), r, s, sp.nu)


@given(spaces(d_max=8), seeds())
def test_data_processing_random(space, seed):
    rng = np.random.default_rng(seed)
    T = random_markov_operator(rng, space)
    assert is_markov_operator(T, space.nu)
    assert data_processing_check(T, random_density(rng, space), random_density(rng, space),
                                 space.nu).ok


@given(seeds(), st.floats(0.05, 2))
def test_master_flow_does_not_increase_entropy(seed, t):
    rng = np.random.default_rng(seed)
    sp = random_space(rng, 2)
    g = random_generator(rng, sp)
    from mflab.random_models import random_two_three_body
    me = build_master_equation(g, random_two_three_body(rng, sp, three_body=True), 3)
    nuN = me.nu_N
    a, b = rng.uniform(0.1, 1, 8), rng.uniform(0.1, 1, 8)
    a, b = a / (a @ nuN), b / (b @ nuN)
    H0 = relative_entropy(a, b, nuN)
    assert relative_entropy(solve_master(me, a, t), solve_master(me, b, t), nuN) <= H0 + 1e-12
    E = semigroup(me.generator.toarray(), t)
    assert data_processing_check(E, a, b, nuN).ok


def _curve(rng, d):
    l0, l1 = random_lam(rng, d), random_lam(rng, d)
    return lambda t: (1 - t) * l0 + t * l1


def test_integral_inequality_trivial_cases():
    rng = np.random.default_rng(5)
    sp = FiniteSpace(np.array([0.5, 1.0, 2.0]))
    g = random_generator(rng, sp)
    c = _curve(rng, 3)
    r0 = random_density(rng, sp, floor=0.05)
    rep = integral_inequality_check(g, c, c, r0, r0, [1.0], t_end=0.5, dt=1e-2)[0]
    np.testing.assert_allclose(rep.lhs, 0, atol=1e-14)
    np.testing.assert_allclose(rep.sharp_rhs, 0, atol=1e-14)
    s0 = random_density(rng, sp, floor=0.05)
    rep = integral_inequality_check(g, c, c, r0, s0, [1.0], t_end=1.0, dt=1e-2)[0]
    assert np.all(np.diff(rep.lhs) <= 1e-12) and rep.ok


@pytest.mark.parametrize("seed", range(4))
def test_integral_inequality_perturbed(seed):
    rng = np.random.default_rng(seed)
    sp = random_space(rng, 3)
    g = random_generator(rng, sp)
    l0, l1 = random_lam(rng, 3), random_lam(rng, 3)
    bump = 0.1 * random_lam(rng, 3)
    a = lambda t: (1 - t) * l0 + t * l1  # noqa: E731
    b = lambda t: a(t) + bump  # noqa: E731
    reps = integral_inequality_check(g, a, b, random_density(rng, sp, floor=0.02),
                                     random_density(rng, sp, floor=0.05), [0.1, 1.0, 10.0],
                                     t_end=1.0, dt=1e-3)
    assert all(r.ok for r in reps)


def test_beta_constants_assembly():
    c = BetaConstants(0.5, 1.0, 2.0, 3.0, 0.4, 0.5)
    assert c.M == 3.5
    assert c.B_T == pytest.approx(math.exp(0.4 + 2 * 3.5 * 0.5))
    assert c.phi0 == pytest.approx(2 * c.B_T * 1.0 + 2.0)
    assert c.C_T == pytest.approx(max(c.phi0, 3.0 * (c.B_T + 1)))
    assert c.beta == pytest.approx(B_CONST / c.C_T)
    T = 0.5
    assert c.bound(T, 0.0, 4) == pytest.approx(math.log(2) / 4 * math.expm1(c.beta * T) / c.beta)
    assert BetaConstants(0.5, 1.0, 2.0, 3.0, 0.4, 0.5, "symmetric").phi0 == pytest.approx(
        2 * (c.B_T + 2.0))
    assert BetaConstants(0.5, 1.0, 2.0, 3.0, 0.4, 0.5, "rigorous").phi0 == pytest.approx(
        2 * (c.B_T * 2.0 + 1.0))
    with pytest.raises(ValueError):
        BetaConstants(0.5, 1.0, 2.0, 3.0, 0.4, 0.5, "other")
    assert BetaConstants(0, 0, 0, 0, 0, 1).beta == math.inf
    assert np.isinf(c.gronwall_bound(50.0, 0.0, 4))


@given(st.floats(0, 2), st.floats(0, 2), st.floats(0, 2), st.floats(0, 5), st.floats(0, 2),
       st.sampled_from(["M_K", "M_lambda", "M_lambda_star", "theta", "delta0"]), st.floats(0.01, 3))
def test_beta_monotone_in_constants(mk, ml, mls, th, d0, which, bump):
    base = dict(M_K=mk, M_lambda=ml, M_lambda_star=mls, theta=th, delta0=d0, T=0.5)
    a = BetaConstants(**base)
    base[which] += bump
    b = BetaConstants(**base)
    assert b.C_T >= a.C_T * (1 - 1e-12)
    assert b.beta <= a.beta * (1 + 1e-12)


@given(st.floats(1e-3, 5), st.floats(1e-3, 5), st.floats(0.05, 2), st.floats(0, 1))
def test_bound_increasing_in_beta(c1, c2, T, W0):
    lo, hi = sorted((c1, c2))
    # a larger C_T means a smaller rate beta, hence a smaller bound at fixed T
    small = BetaConstants(0, 0, 0, hi, 0, T)
    large = BetaConstants(0, 0, 0, lo, 0, T)
    assert large.beta >= small.beta
    assert large.bound(T, W0, 4) >= small.bound(T, W0, 4) * (1 - 1e-12)


def test_chaos_experiment_chaotic_data(two_state):
    sp, g, kern, rho = two_state
    rep = chaos_experiment(g, kern, rho, [2, 3, 4], 0.5, 0.01)
    for N, tr in rep.traces.items():
        assert tr.values[0] == pytest.approx(0, abs=1e-15)
        c = tr.constants
        np.testing.assert_allclose(tr.bound, math.log(2) / N * math.expm1(c.beta * 0.5) / c.beta)
        assert tr.status == "ok" and tr.bound_ok
    summ = rep.summary()
    assert set(summ["per_N"]) == {"2", "3", "4"}


def test_chaos_experiment_independent_particles():
    rng = np.random.default_rng(6)
    sp = FiniteSpace(np.array([0.5, 1.0, 2.0]))
    g = random_generator(rng, sp)
    kern = ConstantKernel(sp, random_lam(rng, 3))
    rep = chaos_experiment(g, kern, random_density(rng, sp), [2, 3], 1.0, 0.01)
    for tr in rep.traces.values():
        assert np.abs(tr.values).max() <= 1e-12


def test_chaos_declared_source(two_state):
    sp, g, kern, rho = two_state
    ver = chaos_experiment(g, kern, rho, [3], 0.2, 0.02)
    dec = chaos_experiment(g, kern, rho, [3], 0.2, 0.02, source="declared")
    # declared constants dominate the exhaustive ones, so the bound is weaker
    assert dec.traces[3].constants.C_T >= ver.traces[3].constants.C_T
