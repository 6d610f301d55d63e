import numpy as np
import pytest

from cpaentropy.cpa import CpaMatrixField
from cpaentropy.geometry import Box, GridSpec, build_box_triangulation
from cpaentropy.lyapopt import (
    EntropyCertificate,
    NotRefinementError,
    VertexMuTable,
    assemble_lp,
    assemble_op2_full_sdp,
    estimate_m_tilde,
    solve_lp,
    verify_certificate,
    vertex_mu_simplified,
)
from cpaentropy.mps import read_mps, read_solution, write_mps, write_solution
from cpaentropy.symlin import cond2
from cpaentropy.sysmodel import SystemModel, linear_model, model_to_spec


def _const_model(n, value, b2=0.0, b3=0.0):
    return SystemModel(
        n=n,
        f=lambda x: np.full(np.shape(x), value, dtype=float),
        jacobian=lambda x: np.zeros(np.shape(x)[:-1] + (n, n)),
        second_bound=lambda p: np.full(np.shape(p)[:-2], b2),
        third_bound=lambda p: np.full(np.shape(p)[:-2], b3),
    )


def test_hand_lp():
    T = build_box_triangulation(Box((0.0,), (1.0,)), GridSpec((1,)))
    # f = 0: the vertex rows reduce to Q >= mu(x_k), so Q = max mu
    lp = assemble_lp(T, _const_model(1, 0.0), VertexMuTable(np.array([5.0, 3.0])), 1)
    sol = solve_lp(lp)
    assert sol.Q == pytest.approx(5.0, abs=1e-9)
    assert sol.V[0] == 0.0


def test_flow_along_unbounded():
    # a constant nonzero flow lets V slope down without limit
    from cpaentropy.lyapopt import LpSolveError

    T = build_box_triangulation(Box((0.0,), (1.0,)), GridSpec((1,)))
    with pytest.raises(LpSolveError):
        solve_lp(assemble_lp(T, _const_model(1, 1.0), VertexMuTable(np.full(2, 5.0)), 1))


def test_row_count_formula(rng):
    for _ in range(10):
        n = int(rng.integers(1, 4))
        counts = tuple(int(c) for c in rng.integers(1, 4, n))
        T = build_box_triangulation(Box((-1.0,) * n, (1.0,) * n), GridSpec(counts))
        lp = assemble_lp(T, linear_model(-np.eye(n)), VertexMuTable(np.zeros(T.num_vertices)), 1)
        S = T.num_simplices
        assert lp.num_constraints == S * 2 * n + S * (n + 1)
        assert lp.num_vars == T.num_vertices + n * S + 1


def test_zero_v_bound_and_shift(small, lorenz, published_p):
    table = vertex_mu_simplified(small, lorenz, published_p)
    lp = assemble_lp(small, lorenz, table, 1)
    q0 = solve_lp(lp).Q
    assert q0 <= table.values.max() + 1e-7
    q1 = solve_lp(assemble_lp(small, lorenz, table.shifted(1.0), 1)).Q
    assert q1 - q0 == pytest.approx(1.0, abs=1e-6)
    q2 = solve_lp(assemble_lp(small, lorenz, table.shifted(1.0), 2)).Q
    q2b = solve_lp(assemble_lp(small, lorenz, table, 2)).Q
    assert q2 - q2b == pytest.approx(2.0, abs=1e-6)


def test_mu_table_examples(square_grid, toy_linear, small, lorenz, published_p):
    t = vertex_mu_simplified(square_grid, toy_linear, np.eye(2))
    assert np.allclose(t.values, 2.0)
    t = vertex_mu_simplified(small, lorenz, published_p)
    assert np.array_equal(t.values, t.lambda_max)
    # synthetic: B3 = 1, n = 3, kappa = 2 on a grid with diameter 0.1
    d = 0.1 / np.sqrt(3)
    T = build_box_triangulation(Box((0.0,) * 3, (2 * d,) * 3), GridSpec((2, 2, 2)))
    assert np.allclose(T.diameters, 0.1)
    t = vertex_mu_simplified(T, _const_model(3, 0.0, b3=1.0), np.diag([1.0, 2.0, 1.5]))
    assert np.allclose(t.correction, 0.01 * 54 * 2)
    with pytest.raises(ValueError):
        vertex_mu_simplified(T, _const_model(3, 0.0), -np.eye(3))


def test_gradient_rows_hold(small, lorenz, published_p):
    lp = assemble_lp(small, lorenz, vertex_mu_simplified(small, lorenz, published_p), 1)
    sol = solve_lp(lp)
    from cpaentropy.cpa import simplex_gradients

    g = np.abs(simplex_gradients(small, sol.V)).sum(axis=1)
    assert np.all(g <= sol.aux.sum(axis=1) + 1e-9)
    assert sol.max_row_violation <= 1e-7 * max(1, abs(sol.Q))


@pytest.fixture(scope="module")
def small_cert(small, lorenz, published_p):
    table = vertex_mu_simplified(small, lorenz, published_p)
    sol = solve_lp(assemble_lp(small, lorenz, table, 1))
    return EntropyCertificate(
        model_to_spec(lorenz), small.box.to_dict(), small.grid.to_dict(), published_p, table.values, sol.V, 1,
        sol.Q, 0.1, 27.0,
    )


def test_verify_clean(small_cert):
    r = verify_certificate(small_cert, samples=10_000)
    assert r.ok, r.messages
    assert r.max_positive_gen_eigs == 1


def test_verify_tampered_q(small_cert):
    c = EntropyCertificate.from_json(small_cert.to_json())
    c.Q -= 1.0
    r = verify_certificate(c, samples=100)
    assert not r.ok and r.vertex_row_violations > 0


def test_verify_tampered_mu(small_cert, small):
    c = EntropyCertificate.from_json(small_cert.to_json())
    k = int(np.argmax(c.mu_table))
    c.mu_table[k] -= 2.0
    r = verify_certificate(c, samples=100)
    assert not r.ok and r.vertex_lmi_violations >= 1


def test_certificate_json_roundtrip(small_cert, tmp_path):
    small_cert.save(tmp_path / "c.json")
    c = EntropyCertificate.load(tmp_path / "c.json")
    assert np.array_equal(c.V, small_cert.V)
    assert c.Q == small_cert.Q
    assert c.to_json() == small_cert.to_json()


def test_m_tilde_examples(small, lorenz, published_p, square_grid):
    assert estimate_m_tilde(small, lorenz, published_p, samples=2000)[0] == 1
    T3 = build_box_triangulation(Box((-1.0,) * 3, (1.0,) * 3), GridSpec((1, 1, 1)))
    assert estimate_m_tilde(T3, linear_model(np.diag([1.0, 1.0, -2.0])), np.eye(3), samples=10)[0] == 2
    m, diag = estimate_m_tilde(square_grid, linear_model(-np.eye(2)), np.eye(2), samples=10)
    assert m == 0 and diag["proof"] is False


def test_op2_refinement_checks(lorenz_box, coarse, lorenz, published_p):
    field = CpaMatrixField.constant(coarse, published_p)
    fine = build_box_triangulation(lorenz_box, GridSpec((30, 14, 28), (0, 0, 1)))
    with pytest.raises(NotRefinementError):
        assemble_op2_full_sdp(coarse, fine, lorenz, field, 1)


def test_op2_variable_audit(lorenz_box, small, coarse, lorenz, published_p, rng):
    field = CpaMatrixField.constant(small, published_p)
    prob = assemble_op2_full_sdp(small, coarse, lorenz, field, 1)
    nv, S = coarse.num_vertices, coarse.num_simplices
    assert prob.num_vars == 2 * nv + 2 * 3 * S + 1
    # with mu at the direct values and V = 0 the blocks reduce to A - mu P <= 0 plus the h^2 E term
    y = np.zeros(prob.num_vars)
    table = vertex_mu_simplified(coarse, lorenz, published_p)
    y[:nv] = table.values
    F = prob.groups[0].evaluate(y)
    # constant P: D = 0 and B3 = 0, so the block is exactly mu P - A
    assert np.linalg.eigvalsh(F).min() >= -1e-9


def test_mps_roundtrip(tmp_path, small, lorenz, published_p):
    lp = assemble_lp(small, lorenz, vertex_mu_simplified(small, lorenz, published_p), 1)
    write_mps(lp, tmp_path / "lp.mps")
    c, A, b, lo, hi, cols, rows = read_mps(tmp_path / "lp.mps")
    assert np.array_equal(c, lp.c)
    assert (A != lp.A_ub).nnz == 0
    assert np.array_equal(b, lp.b_ub)
    assert np.array_equal(lo, lp.lo) and np.array_equal(hi, lp.hi)
    assert max(len(s) for s in cols + rows) <= 8
    sol = solve_lp(lp)
    x = np.concatenate([sol.V, sol.aux.ravel(), [sol.Q]])
    write_solution(tmp_path / "x.sol", lp, x)
    assert np.array_equal(read_solution(tmp_path / "x.sol", lp), x)


def test_table_mismatch(small, lorenz):
    with pytest.raises(ValueError):
        assemble_lp(small, lorenz, VertexMuTable(np.zeros(3)), 1)
    with pytest.raises(ValueError):
        assemble_lp(small, lorenz, VertexMuTable(np.zeros(small.num_vertices)), 0)
