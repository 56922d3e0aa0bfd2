import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from conftest import random_problem
from rotavg.errors import DidNotConverge, NearPiAmbiguity
from rotavg.so3 import (
    UnitRotation,
    angular_distance,
    exp_map,
    sample_uniform,
)
from rotavg.solver import ManifoldProblem, ResidualTerm, numeric_gradient_check, problem_cost, solve

I = UnitRotation.identity()
Rz = UnitRotation.about_z


def trace_cost(rots, terms):
    # independent objective: squared arccos-of-trace distances
    total = 0.0
    for t in terms:
        m = t.meas.matrix.T @ rots[t.j].matrix @ rots[t.i].matrix.T
        c = np.clip((np.trace(m) - 1.0) / 2.0, -1.0, 1.0)
        total += math.acos(c) ** 2
    return total


def test_single_term_exact_fit():
    prob = ManifoldProblem({0: I, 1: I}, [ResidualTerm(0, 1, Rz(17.0))], fixed={0})
    sol, rep = solve(prob)
    assert angular_distance(sol[1], Rz(17.0)) < 1e-8
    assert rep.final_cost < 1e-16
    assert rep.converged
    assert sol[0] is prob.variables[0]


def test_consistent_triangle():
    rng = np.random.default_rng(1)
    gt = [sample_uniform(rng) for _ in range(3)]
    gt = [r @ gt[0].inverse() for r in gt]  # gauge: R_0 = I
    terms = [ResidualTerm(i, j, gt[j] @ gt[i].inverse()) for i, j in [(0, 1), (0, 2), (1, 2)]]
    prob = ManifoldProblem({0: I, 1: I, 2: I}, terms, fixed={0})
    sol, rep = solve(prob)
    assert rep.final_cost < 1e-16
    for v in range(3):
        assert angular_distance(sol[v], gt[v]) < 1e-6


def test_perturbed_triangle_matches_oracles():
    rng = np.random.default_rng(5)
    gt = [sample_uniform(rng) for _ in range(3)]
    meas = {(i, j): gt[j] @ gt[i].inverse() for i, j in [(0, 1), (0, 2), (1, 2)]}
    meas[(1, 2)] = meas[(1, 2)] @ UnitRotation.from_axis_angle([0.3, -1.0, 0.4], 3.0)
    terms = [ResidualTerm(i, j, m) for (i, j), m in meas.items()]
    prob = ManifoldProblem({0: gt[0], 1: gt[1], 2: gt[2]}, terms, fixed={0})
    sol, rep = solve(prob)
    assert rep.final_cost < rep.initial_cost

    # closed form: a 3-cycle with deviation d has optimal cost d^2 / 3
    d = math.radians(3.0)
    assert abs(rep.final_cost - d * d / 3.0) < 1e-6

    # generic optimiser over the 6 free tangent coordinates, objective via traces
    def f(x):
        rots = {0: gt[0], 1: gt[1] @ exp_map(x[:3]), 2: gt[2] @ exp_map(x[3:])}
        return trace_cost(rots, terms)

    best = minimize(f, np.zeros(6), method="BFGS", options={"gtol": 1e-12})
    best = minimize(f, best.x, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-16, "maxiter": 20000})
    assert abs(rep.final_cost - best.fun) < 1e-6
    assert abs(trace_cost(sol, terms) - rep.final_cost) < 1e-9


def test_gradient_check_examples():
    rng = np.random.default_rng(2)
    gt = [sample_uniform(rng) for _ in range(4)]
    terms = [ResidualTerm(i, j, gt[j] @ gt[i].inverse()) for i, j in [(0, 1), (1, 2), (2, 3), (0, 3)]]
    zero = ManifoldProblem(dict(enumerate(gt)), terms, fixed={0})
    assert numeric_gradient_check(zero, 1e-6) < 1e-6
    single = ManifoldProblem({0: I, 1: Rz(40.0)}, [ResidualTerm(0, 1, Rz(17.0))], fixed={0})
    assert numeric_gradient_check(single, 1e-6) < 1e-5
    assert numeric_gradient_check(random_problem(3), 1e-6) < 1e-4
    with pytest.raises(ValueError):
        numeric_gradient_check(single, 1e-2)


@given(st.integers(0, 100_000))
def test_gradient_check_random(seed):
    assert numeric_gradient_check(random_problem(seed), 1e-6) < 1e-4


@given(st.integers(0, 100_000))
def test_monotone_accepted_costs(seed):
    prob = random_problem(seed, n=12)
    _, rep = solve(prob, warn=False)
    h = rep.cost_history
    assert all(b <= a for a, b in zip(h, h[1:]))
    assert rep.final_cost <= rep.initial_cost
    assert h[0] == rep.initial_cost and h[-1] == rep.final_cost


@given(st.integers(0, 100_000))
def test_gauge_invariance(seed):
    # R -> R S leaves every R_j R_i^T unchanged, so the solution moves by S
    prob = random_problem(seed, n=8)
    s = sample_uniform(np.random.default_rng(seed + 1))
    moved = ManifoldProblem({v: r @ s for v, r in prob.variables.items()}, prob.terms, fixed=prob.fixed)
    a, _ = solve(prob, warn=False)
    b, _ = solve(moved, warn=False)
    for v in a:
        assert angular_distance(a[v] @ s, b[v]) < 1e-8


def test_deterministic():
    prob = random_problem(9)
    a, ra = solve(prob)
    b, rb = solve(prob)
    assert ra == rb
    assert all(np.array_equal(a[v].q, b[v].q) for v in a)


def test_fixed_returned_bit_identical():
    prob = random_problem(4)
    sol, _ = solve(prob)
    assert np.array_equal(sol[0].q, prob.variables[0].q)


def test_lowest_variable_fixed_when_gauge_free():
    prob = random_problem(4)
    free = ManifoldProblem(prob.variables, prob.terms, fixed=set())
    sol, _ = solve(free)
    assert np.array_equal(sol[0].q, prob.variables[0].q)


def test_constants_are_held():
    c = {5: Rz(30.0)}
    prob = ManifoldProblem({1: I}, [ResidualTerm(5, 1, Rz(10.0))], constants=c)
    sol, rep = solve(prob)
    assert set(sol) == {1}
    assert angular_distance(sol[1], Rz(40.0)) < 1e-8


def test_did_not_converge_warns():
    prob = random_problem(1, n=15, init_noise=60.0)
    prob.max_iterations = 1
    with pytest.warns(DidNotConverge):
        _, rep = solve(prob)
    assert not rep.converged
    assert rep.final_cost <= rep.initial_cost


def test_near_pi_initial_residual_is_jittered_away():
    prob = ManifoldProblem({0: I, 1: I}, [ResidualTerm(0, 1, Rz(180.0))], fixed={0})
    sol, rep = solve(prob)
    assert angular_distance(sol[1], Rz(180.0)) < 1e-6


def test_near_pi_on_fixed_pair_raises():
    prob = ManifoldProblem({0: I, 1: I, 2: I},
                           [ResidualTerm(0, 1, Rz(180.0)), ResidualTerm(0, 2, Rz(5.0))], fixed={0, 1})
    with pytest.raises(NearPiAmbiguity):
        solve(prob)


def test_problem_cost_matches_trace_cost():
    prob = random_problem(6)
    assert problem_cost(prob) == pytest.approx(trace_cost(prob.variables, prob.terms), rel=1e-9)


def test_sparse_path_matches_dense():
    import rotavg.solver as solver

    prob = random_problem(8, n=20)
    dense, rd = solve(prob)
    old = solver.DENSE_LIMIT
    solver.DENSE_LIMIT = 0
    try:
        sparse, rs = solve(prob)
    finally:
        solver.DENSE_LIMIT = old
    assert abs(rd.final_cost - rs.final_cost) < 1e-10
    assert max(angular_distance(dense[v], sparse[v]) for v in dense) < 1e-6
