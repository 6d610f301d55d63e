import math

import numpy as np
import pytest

from cpaentropy.geometry import Box, GridSpec, build_box_triangulation
from cpaentropy.lyapopt import const_metric_a
from cpaentropy.metricopt import (
    MetricInfeasibleError,
    assemble_op1_const,
    assemble_op1_full,
    bisect_mu,
    e_value,
    solve_const_feasibility,
    sym_from_entries,
    verify_const_metric,
    vertex_lambda_max,
)
from cpaentropy.symlin import lambda_max_gen, sym_eigvals
from cpaentropy.sysmodel import SystemModel, linear_model


@pytest.fixture(scope="module")
def segment():
    return build_box_triangulation(Box((0.0,), (1.0,)), GridSpec((1,)))


def test_lorenz_const_counts(coarse, lorenz):
    prob = assemble_op1_const(coarse, lorenz, 27.0, 0.1)
    assert prob.num_vars == 7
    assert prob.num_blocks == 69_122


def test_scalar_toy(segment):
    m = linear_model([[-1.0]])
    prob = assemble_op1_const(segment, m, 0.0, 0.1)
    vertex = prob.groups[-1]
    # block: mu p - (-2 p) = 2 p, plus the C term which vanishes here
    y = np.array([0.5, 1.0])
    assert np.allclose(vertex.evaluate(y)[:, 0, 0], 1.0)
    assert solve_const_feasibility(prob).feasible


def test_full_variable_count(square_grid, toy_linear):
    prob = assemble_op1_full(square_grid, toy_linear, 3.0, 0.1)
    n = 2
    assert prob.num_vars == 3 * square_grid.num_vertices + square_grid.num_simplices * (1 + n)
    assert prob.num_blocks == 3 * square_grid.num_simplices * (n + 1)
    assert prob.num_scalar_rows == square_grid.num_simplices * 3 * 2 * n


def test_full_vertex_block_matches_direct_formula(small, lorenz, rng):
    prob = assemble_op1_full(small, lorenz, 30.0, 0.1)
    nv, S = small.num_vertices, small.num_simplices
    y = rng.uniform(0.1, 0.5, prob.num_vars)
    Pv = prob.metric(y)
    from cpaentropy.cpa import CpaMatrixField

    field = CpaMatrixField(small, Pv)
    C = y[nv * 6 : nv * 6 + S]
    D = y[nv * 6 + S :].reshape(S, 3).sum(axis=1)
    E = prob.e_values(y)
    F = prob.groups[3].evaluate(y)
    for s, loc in [(0, 0), (17, 2), (S - 1, 3)]:
        v = small.simplices[s, loc]
        x = small.vertices[v]
        P = Pv[v]
        J = lorenz.jacobian(x)
        A = P @ J + J.T @ P + field.gradients[s] @ lorenz.f(x)
        expect = 30.0 * P - A - small.diameters[s] ** 2 * E[s] * np.eye(3)
        assert np.allclose(F[s * 4 + loc], expect, atol=1e-10)
    # E recomputed independently
    n = 3
    Eind = n**2 * ((1 + 4 * math.sqrt(n)) * 24.5 * D + 2 * n * 0.0 * C)
    assert np.array_equal(E, e_value(3, np.full(S, 24.5), np.zeros(S), D, C))
    assert np.allclose(E, Eind, rtol=1e-15)


def test_const_e_uses_third_derivative(square_grid):
    third = SystemModel(
        n=2,
        f=lambda x: -np.asarray(x),
        jacobian=lambda x: -np.broadcast_to(np.eye(2), np.shape(x)[:-1] + (2, 2)),
        second_bound=lambda p: np.zeros(np.shape(p)[:-2]),
        third_bound=lambda p: np.ones(np.shape(p)[:-2]),
    )
    prob = assemble_op1_const(square_grid, third, 1.0, 0.1)
    y = np.array([1.0, 0.0, 1.0, 2.0])
    assert np.allclose(prob.e_values(y), 2 * 2**3 * 1.0 * 2.0)


def test_linear_identity_metric_minimal_mu():
    a, c = 0.7, 1.3
    m = linear_model(np.diag([a, -c]))
    assert np.allclose(lambda_max_gen(const_metric_a(m, np.eye(2), np.zeros((1, 2))), np.eye(2)), 2 * a)


def test_large_mu_identity_feasible(small, lorenz):
    prob = assemble_op1_const(small, lorenz, 1e6, 0.1)
    y = np.array([1, 0, 0, 1, 0, 1, 1.0])
    assert prob.verify(y).ok


def test_linear_feasible_just_above(square_grid, toy_linear):
    prob = assemble_op1_const(square_grid, toy_linear, 2.0 + 1e-3, 0.1)
    sol = solve_const_feasibility(prob)
    assert sol.feasible
    assert sym_eigvals(sol.P)[-1] >= 0.1 - 1e-12
    assert verify_const_metric(square_grid, toy_linear, sol.P, 2.0 + 1e-3, 0.1).ok


def test_lorenz_mu_zero_not_feasible(small, lorenz):
    sol = solve_const_feasibility(assemble_op1_const(small, lorenz, 0.0, 0.1))
    assert sol.status in ("infeasible", "inconclusive")


def test_bisect_linear(square_grid, toy_linear):
    res = bisect_mu(square_grid, toy_linear, 0.1, 10.0, 0.01)
    assert abs(res.mu_star - 2.0) <= 0.01
    assert verify_const_metric(square_grid, toy_linear, res.P, res.mu_star, 0.1).ok


def test_bisect_degenerate_tol(square_grid, toy_linear):
    res = bisect_mu(square_grid, toy_linear, 0.1, 5.0, 10.0)
    assert res.mu_star == 5.0
    assert len(res.history) == 1


def test_bisect_infeasible_at_top(square_grid, toy_linear):
    with pytest.raises(MetricInfeasibleError):
        bisect_mu(square_grid, toy_linear, 0.1, 1.0, 0.1)


def test_sampled_certificate_and_monotonicity(small, lorenz, rng):
    res = bisect_mu(small, lorenz, 0.1, 40.0, 0.5)
    xs = rng.uniform(small.lower, small.upper, size=(10_000, 3))
    A = const_metric_a(lorenz, res.P, xs)
    lm = lambda_max_gen(A, np.broadcast_to(res.P, A.shape))
    assert lm.max() <= res.mu_star + 1e-6
    for mu in (res.mu_star + 1, res.mu_star + 5):
        assert verify_const_metric(small, lorenz, res.P, mu, 0.1).ok
    assert vertex_lambda_max(small, lorenz, res.P).max() <= res.mu_star + 1e-9


def test_dimension_mismatch(square_grid, lorenz):
    with pytest.raises(ValueError):
        assemble_op1_const(square_grid, lorenz, 1.0, 0.1)
    with pytest.raises(ValueError):
        assemble_op1_const(square_grid, linear_model(np.eye(2)), 1.0, 0.0)


def test_sym_from_entries():
    assert np.allclose(sym_from_entries([1, 2, 3], 2), [[1, 2], [2, 3]])
