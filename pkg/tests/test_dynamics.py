import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mflab import defaults
from mflab.dynamics import (ConvergenceError, EvolutionProblem, _Uniformizer, averaged_vs_meanfield,
                            build_master_equation, comparison_check, master_trace,
                            simulate_particles, simulate_replicas, solve, solve_master,
                            stability_check, _master_rk4)
from mflab.entropy import marginal
from mflab.kernels import JumpKernel, RateGenerator, adjoint_matrix, semigroup
from mflab.models import ConstantKernel
from mflab.random_models import (random_density, random_generator, random_lam, random_parametrized,
                                 random_two_three_body)
from mflab.space import FiniteSpace, as_tensor, from_tensor, tensorize

from .conftest import seeds


def _problem(rng, d, mode="meanfield", N=None, three_body=False):
    sp = FiniteSpace(rng.uniform(0.5, 2, d))
    g = random_generator(rng, sp)
    kern = (random_two_three_body(rng, sp, three_body=three_body) if rng.random() < 0.5
            else random_parametrized(rng, sp, k=2))
    return sp, g, kern, random_density(rng, sp, floor=0.02)


def test_symmetric_fixed_point():
    sp = FiniteSpace.uniform(3)
    lam = np.array([[0, 1, 2], [1, 0, 0.5], [2, 0.5, 0]])
    tr = solve(EvolutionProblem(RateGenerator.zero(sp), ConstantKernel(sp, lam),
                                np.full(3, 1 / 3), 2.0, 0.05))
    np.testing.assert_allclose(tr.densities, 1 / 3, atol=1e-14)


@given(seeds(), st.integers(1, 6))
def test_linear_mode_matches_expm(seed, d):
    rng = np.random.default_rng(seed)
    sp = FiniteSpace(rng.uniform(0.5, 2, d))
    g = random_generator(rng, sp)
    lam = random_lam(rng, d)
    rho0 = random_density(rng, sp)
    tr = solve(EvolutionProblem(g, None, rho0, 1.0, 0.01, "linear", frozen=JumpKernel(sp, lam)))
    exact = semigroup(np.asarray(g.kstar) + adjoint_matrix(lam, sp.nu), 1.0) @ rho0
    assert np.abs(tr.final - exact) @ sp.nu <= 1e-8


@given(seeds(), st.integers(2, 4), st.sampled_from(["meanfield", "averaged"]))
def test_trace_invariants(seed, d, mode):
    rng = np.random.default_rng(seed)
    sp, g, kern, rho0 = _problem(rng, d)
    prob = EvolutionProblem(g, kern, rho0, 1.0, 0.01, mode, N=4 if mode == "averaged" else None)
    tr = solve(prob)
    assert tr.mass_defect.max() <= 1e-8
    assert tr.densities.min() >= 0
    np.testing.assert_allclose(tr.densities @ sp.nu, 1.0, atol=1e-12)
    assert tr.log_oscillation_excess(prob.growth_constant()) <= 1e-6
    assert tr.halving_defect <= 1e-8


@given(seeds(), st.integers(2, 5))
def test_two_body_averaged_equals_meanfield(seed, N):
    rng = np.random.default_rng(seed)
    sp = FiniteSpace(rng.uniform(0.5, 2, 3))
    kern = random_two_three_body(rng, sp, three_body=N >= 3)
    g = random_generator(rng, sp)
    rho0 = random_density(rng, sp)
    a = solve(EvolutionProblem(g, kern, rho0, 1.0, 0.01, "averaged", N=N))
    b = solve(EvolutionProblem(g, kern, rho0, 1.0, 0.01, "meanfield"))
    np.testing.assert_allclose(a.densities, b.densities, atol=1e-12)


def test_hermite_interpolation(two_state):
    sp, g, kern, rho = two_state
    coarse = solve(EvolutionProblem(g, kern, rho, 1.0, 0.05))
    fine = solve(EvolutionProblem(g, kern, rho, 1.0, 0.0025))
    np.testing.assert_allclose(coarse.at(0.5), coarse.densities[10])
    assert np.abs(coarse.at(0.525) - fine.at(0.525)).max() < 1e-6


def test_prescribed_mode_reproduces_meanfield(two_state):
    sp, g, kern, rho = two_state
    mf = solve(EvolutionProblem(g, kern, rho, 1.0, 0.01))
    pr = solve(EvolutionProblem(g, kern, rho, 1.0, 0.01, "prescribed", drive=mf.at))
    assert np.abs(pr.final - mf.final) @ sp.nu < 1e-7


def test_coarse_step_fails_certificate():
    rng = np.random.default_rng(0)
    sp = FiniteSpace(rng.uniform(0.5, 2, 3))
    g = random_generator(rng, sp, 2.0)
    kern = random_two_three_body(rng, sp, scale=2.0)
    with pytest.raises(ConvergenceError):
        solve(EvolutionProblem(g, kern, random_density(rng, sp), 1.0, 0.1))


def test_problem_validation(two_state):
    sp, g, kern, rho = two_state
    with pytest.raises(ValueError):
        EvolutionProblem(g, kern, 2 * rho, 1.0)
    with pytest.raises(ValueError):
        EvolutionProblem(g, kern, rho, 1.0, mode="averaged")
    with pytest.raises(ValueError):
        EvolutionProblem(g, kern, rho, 1.0, mode="prescribed")
    with pytest.raises(ValueError):
        EvolutionProblem(g, kern, rho, 1.0, dt=0)


def test_master_rejects_single_particle(two_state):
    sp, g, kern, _ = two_state
    with pytest.raises(ValueError):
        build_master_equation(g, kern, 1)


def test_master_kronecker_sum():
    rng = np.random.default_rng(0)
    sp = FiniteSpace(np.array([0.5, 1.0, 2.0]))
    g = random_generator(rng, sp)
    lam = random_lam(rng, 3)
    me = build_master_equation(g, ConstantKernel(sp, lam), 2)
    A = np.asarray(g.kstar) + adjoint_matrix(lam, sp.nu)
    I = np.eye(3)
    np.testing.assert_allclose(me.generator.toarray(), np.kron(I, A) + np.kron(A, I), atol=1e-14)


def test_master_mass_and_identity(two_state):
    sp, g, kern, rho = two_state
    me = build_master_equation(g, kern, 4)
    r0 = tensorize(rho, 4)
    np.testing.assert_array_equal(solve_master(me, r0, 0.0), r0)
    out = solve_master(me, r0, 1.5)
    assert out @ me.nu_N == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(me.nu_N @ me.generator.toarray(), 0, atol=1e-12)


def test_master_expm_vs_stepping(two_state):
    sp, g, kern, rho = two_state
    me = build_master_equation(g, kern, 2)
    r0 = tensorize(rho, 2)
    a = solve_master(me, r0, 1.0)
    b = _master_rk4(me, r0, 1.0, 0.01)
    assert np.abs(a - b) @ me.nu_N <= 1e-8


def test_master_rk4_path(monkeypatch, two_state):
    sp, g, kern, rho = two_state
    me = build_master_equation(g, kern, 5)
    exact = solve_master(me, tensorize(rho, 5), 1.0)
    monkeypatch.setitem(defaults.DEFAULTS, "master_expm_max", 4)
    stepped = solve_master(me, tensorize(rho, 5), 1.0)
    assert np.abs(exact - stepped) @ me.nu_N <= 1e-8


def test_master_cap(monkeypatch, two_state):
    sp, g, kern, _ = two_state
    monkeypatch.setenv("MFLAB_CAP_STATES", "10")
    with pytest.raises(OverflowError):
        build_master_equation(g, kern, 4)
    build_master_equation(g, kern, 3)


@given(seeds())
def test_master_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    sp, g, kern, _ = _problem(rng, 2, three_body=True)
    N = 3
    me = build_master_equation(g, kern, N)
    r0 = rng.uniform(0.1, 1, 2**N)
    r0 /= r0 @ me.nu_N
    perm = (2, 0, 1)
    swap = lambda v: from_tensor(as_tensor(v, 2, N).transpose(perm))  # noqa: E731
    np.testing.assert_allclose(solve_master(me, swap(r0), 0.7), swap(solve_master(me, r0, 0.7)),
                               atol=1e-12)


def test_master_marginal_symmetry(two_state):
    sp, g, kern, rho = two_state
    N = 4
    me = build_master_equation(g, kern, N)
    out = solve_master(me, tensorize(rho, N), 1.0)
    m = [marginal(out, sp, N, 1, keep=[k]) for k in range(N)]
    for mk in m[1:]:
        np.testing.assert_allclose(mk, m[0], atol=1e-12)


def test_master_trace_matches_solve(two_state):
    sp, g, kern, rho = two_state
    me = build_master_equation(g, kern, 3)
    times, tr = master_trace(me, tensorize(rho, 3), 1.0, 0.1)
    np.testing.assert_allclose(tr[-1], solve_master(me, tensorize(rho, 3), 1.0), atol=1e-12)
    assert len(times) == 11


def test_simulator_zero_rates_and_determinism(two_state):
    sp, g, kern, rho = two_state
    zero = ConstantKernel(sp, np.zeros((2, 2)))
    tr = simulate_particles(RateGenerator.zero(sp), zero, 3, rho, 5.0, seed=1)
    assert len(tr.times) == 1
    a = simulate_particles(g, kern, 3, rho, 5.0, seed=7)
    b = simulate_particles(g, kern, 3, rho, 5.0, seed=7)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.configs, b.configs)
    np.testing.assert_array_equal(a.state_at(2.5), b.state_at(2.5))
    r1 = simulate_replicas(g, kern, 3, rho, 1.0, 500, seed=3)
    np.testing.assert_array_equal(r1, simulate_replicas(g, kern, 3, rho, 1.0, 500, seed=3))


def test_simulator_chunking_independent_of_total(two_state):
    sp, g, kern, rho = two_state
    small = simulate_replicas(g, kern, 3, rho, 1.0, 100, seed=5, chunk=64)
    big = simulate_replicas(g, kern, 3, rho, 1.0, 200, seed=5, chunk=64)
    np.testing.assert_array_equal(small[:64], big[:64])


def test_uniformizer_asserts_majorant(two_state):
    sp, g, kern, _ = two_state
    s = _Uniformizer(g, kern, 3)
    s.rate *= 0.1
    configs = np.zeros((50, 3), dtype=np.int64)
    counts = np.tile([3, 0], (50, 1))
    with pytest.raises(AssertionError):
        s.step(configs, counts, np.random.default_rng(0))


def test_simulator_matches_master(two_state):
    sp, g, kern, rho = two_state
    N, reps = 3, 40_000
    fin = simulate_replicas(g, kern, N, rho, 1.0, reps, seed=11)
    exact = marginal(solve_master(build_master_equation(g, kern, N), tensorize(rho, N), 1.0),
                     sp, N, 1) * sp.nu
    sigma = np.sqrt(exact[0] * (1 - exact[0]) / reps)
    for k in range(N):
        assert abs((fin[:, k] == 0).mean() - exact[0]) <= 4 * sigma


def test_comparison_examples():
    rng = np.random.default_rng(2)
    sp = FiniteSpace(np.array([0.5, 1.5, 1.0]))
    g = random_generator(rng, sp)
    l0, l1 = random_lam(rng, 3), random_lam(rng, 3)
    curve = lambda t: (1 - t) * l0 + t * l1  # noqa: E731
    rho0 = random_density(rng, sp)
    assert comparison_check(g, curve, rho0, np.zeros(3), 1.0).ok
    same = comparison_check(g, curve, rho0, rho0, 1.0)
    assert same.ok and same.min_gap == 0
    with pytest.raises(ValueError):
        comparison_check(g, curve, np.zeros(3), rho0, 1.0)


@given(seeds())
def test_comparison_random(seed):
    rng = np.random.default_rng(seed)
    sp = FiniteSpace(rng.uniform(0.5, 2, int(rng.integers(1, 5))))
    g = random_generator(rng, sp)
    lam = random_lam(rng, sp.d)
    rho0 = rng.uniform(0, 2, sp.d)
    assert comparison_check(g, lam, rho0, rho0 * rng.uniform(0, 1, sp.d), 1.0).ok


def test_stability_examples():
    rng = np.random.default_rng(3)
    sp = FiniteSpace(np.array([0.5, 1.5, 1.0]))
    g = random_generator(rng, sp)
    lam = random_lam(rng, 3)
    r0, s0 = random_density(rng, sp), random_density(rng, sp)
    same = stability_check(g, lam, lam, r0, r0, 1.0)
    assert np.all(same.lhs == 0) and np.all(same.rhs >= 0)
    contr = stability_check(g, lam, lam, r0, s0, 1.0)
    assert np.all(contr.lhs <= np.abs(r0 - s0) @ sp.nu + 1e-12)
    assert stability_check(g, lam, random_lam(rng, 3), r0, s0, 1.0).ok


def test_averaged_vs_meanfield_trivial_cases(two_state):
    sp, g, kern, rho = two_state
    r = averaged_vs_meanfield(kern, g, rho, 4, 1.0, samples=200)
    assert r.l1_gap <= 1e-12 and r.ok
    pk = random_parametrized(np.random.default_rng(4), sp)
    r0 = averaged_vs_meanfield(pk, g, rho, 4, 0.0, samples=200)
    assert r0.l1_gap == 0 and r0.ok
