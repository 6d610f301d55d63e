"""Metric problem: a (CPA or constant) metric P with bounded generalized eigenvalues.

For every simplex and each of its vertices x_k the blocks are

    P(x_k) - eps0 I >= 0,   C I - P(x_k) >= 0,
    mu P(x_k) - A(x_k) - h^2 E I >= 0,

with A(x) = P Df + Df^T P + (w_ij . f) and E = n^2[(1+4 sqrt n) B D + 2n B3 C].
Only the constant-P variant is solved in-process; the full variant is built
for export.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Triangulation
from .lmi import FeasibilityResult, LmiGroup, LmiProblem, solve_lmi_feasibility
from .symlin import lambda_max_gen, sym_eigvals
from .sysmodel import SystemModel

log = logging.getLogger(__name__)

MARGIN_REL = 1e-8


class MetricInfeasibleError(RuntimeError):
    def __init__(self, msg, result: FeasibilityResult = None):
        super().__init__(msg)
        self.result = result


def sym_basis(n: int):
    """Index pairs (i <= j) and the matching symmetric basis matrices."""
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    basis = np.zeros((len(pairs), n, n))
    for e, (i, j) in enumerate(pairs):
        basis[e, i, j] = 1.0
        basis[e, j, i] = 1.0
    return pairs, basis


def sym_from_entries(entries, n: int) -> np.ndarray:
    pairs, basis = sym_basis(n)
    return np.einsum("...e,eij->...ij", np.asarray(entries, dtype=float), basis)


def e_coefficients(n: int, B, B3):
    """Coefficients (a, b) with E = a * D + b * C."""
    B = np.asarray(B, dtype=float)
    B3 = np.asarray(B3, dtype=float)
    return n**2 * (1.0 + 4.0 * math.sqrt(n)) * B, 2.0 * n**3 * B3


def e_value(n: int, B, B3, D, C):
    a, b = e_coefficients(n, B, B3)
    return a * np.asarray(D, dtype=float) + b * np.asarray(C, dtype=float)


@dataclass
class Op1Problem(LmiProblem):
    mode: str = "const"
    mu: float = 0.0
    eps0: float = 0.1
    h: np.ndarray = None
    B: np.ndarray = None
    B3: np.ndarray = None
    grid: dict = None

    @property
    def n(self) -> int:
        return self.groups[0].size

    def e_values(self, y) -> np.ndarray:
        """E_nu at a decision vector, recomputed from (B, B3, D, C)."""
        y = np.asarray(y, dtype=float)
        S = len(self.h)
        if self.mode == "const":
            C = np.full(S, y[self.var_names.index("C")])
            D = np.zeros(S)
        else:
            c0 = self.var_names.index("C[0]")
            C = y[c0 : c0 + S]
            d0 = self.var_names.index("D[0,0]")
            D = y[d0 : d0 + S * self.n].reshape(S, self.n).sum(axis=1)
        return e_value(self.n, self.B, self.B3, D, C)

    def metric(self, y) -> np.ndarray:
        """P (constant mode) or the stack of vertex matrices (full mode)."""
        n = self.n
        k = n * (n + 1) // 2
        y = np.asarray(y, dtype=float)
        if self.mode == "const":
            return sym_from_entries(y[:k], n)
        nv = self.meta["num_vertices"]
        return sym_from_entries(y[: nv * k].reshape(nv, k), n)

    def c_value(self, y) -> float:
        y = np.asarray(y, dtype=float)
        if self.mode == "const":
            return float(y[self.var_names.index("C")])
        c0 = self.var_names.index("C[0]")
        return float(y[c0 : c0 + len(self.h)].max())

    def constants_table(self) -> np.ndarray:
        """Distinct (h, B, B3) rows; uniform grids have a single row."""
        return np.unique(np.column_stack([self.h, self.B, self.B3]), axis=0)


def _default_c_cap(eps0: float, c_cap) -> float:
    return 1e3 * eps0 if c_cap is None else float(c_cap)


def _check_inputs(T: Triangulation, model: SystemModel, mu: float, eps0: float):
    if T.n != model.n:
        raise ValueError(f"dimension mismatch: triangulation n={T.n}, model n={model.n}")
    if not eps0 > 0:
        raise ValueError("eps0 must be positive")
    if not mu >= 0:
        raise ValueError("mu must be nonnegative")


def _vertex_blocks(T: Triangulation):
    """(simplex, local vertex) pairs in simplex-major order."""
    S, m = T.simplices.shape
    sid = np.repeat(np.arange(S), m)
    loc = np.tile(np.arange(m), S)
    return sid, loc, T.simplices[sid, loc]


def assemble_op1_const(
    T: Triangulation,
    model: SystemModel,
    mu: float,
    eps0: float,
    c_cap: float = None,
) -> Op1Problem:
    _check_inputs(T, model, mu, eps0)
    n = T.n
    pairs, basis = sym_basis(n)
    k = len(pairs)
    c_cap = _default_c_cap(eps0, c_cap)
    names = [f"P[{i},{j}]" for i, j in pairs] + ["C"]
    ic = k
    eye = np.eye(n)

    h = T.diameters
    B = model.hessian_bounds(T)
    B3 = model.third_bounds(T)
    _, ec = e_coefficients(n, B, B3)

    one = np.array([[-1, -1]])
    lower = LmiGroup("pd_lower", one, np.arange(k)[None], basis[None], eps0 * eye[None])
    upper = LmiGroup(
        "p_upper",
        one.copy(),
        np.arange(k + 1)[None],
        np.concatenate([-basis, eye[None]])[None],
        np.zeros((1, n, n)),
    )

    sid, loc, vid = _vertex_blocks(T)
    J = model.jacobian(T.vertices)[vid]  # (nb, n, n)
    EJ = np.einsum("eij,bjk->beik", basis, J)
    coef_p = mu * basis[None] - EJ - np.swapaxes(EJ, -1, -2)
    coef_c = -(h[sid] ** 2 * ec[sid])[:, None, None] * eye
    vertex = LmiGroup(
        "vertex",
        np.column_stack([sid, vid]),
        np.broadcast_to(np.arange(k + 1), (len(sid), k + 1)).copy(),
        np.concatenate([coef_p, coef_c[:, None]], axis=1),
        np.zeros((len(sid), n, n)),
    )

    lo = np.full(k + 1, -c_cap)
    hi = np.full(k + 1, c_cap)
    for e, (i, j) in enumerate(pairs):
        if i == j:
            lo[e] = eps0
    lo[ic] = eps0
    obj = np.zeros(k + 1)
    obj[ic] = 1.0
    return Op1Problem(
        var_names=names,
        groups=[lower, upper, vertex],
        var_lo=lo,
        var_hi=hi,
        objective=obj,
        meta={"c_cap": c_cap, "num_vertices": T.num_vertices, "num_simplices": T.num_simplices},
        mode="const",
        mu=float(mu),
        eps0=float(eps0),
        h=h,
        B=B,
        B3=B3,
        grid=T.grid_description(),
    )


def assemble_op1_full(
    T: Triangulation,
    model: SystemModel,
    mu: float,
    eps0: float,
    c_cap: float = None,
    minimize_c: bool = False,
) -> Op1Problem:
    """All blocks of the CPA-metric problem; intended for export."""
    _check_inputs(T, model, mu, eps0)
    n = T.n
    pairs, basis = sym_basis(n)
    k = len(pairs)
    nv, S = T.num_vertices, T.num_simplices
    c_cap = _default_c_cap(eps0, c_cap)
    eye = np.eye(n)

    names = [f"P{v}[{i},{j}]" for v in range(nv) for i, j in pairs]
    c0 = len(names)
    names += [f"C[{s}]" for s in range(S)]
    d0 = len(names)
    names += [f"D[{s},{i}]" for s in range(S) for i in range(n)]
    if minimize_c:
        names.append("Cmax")
    m = len(names)

    h = T.diameters
    B = model.hessian_bounds(T)
    B3 = model.third_bounds(T)
    ed, ec = e_coefficients(n, B, B3)

    sid, loc, vid = _vertex_blocks(T)
    nb = len(sid)
    labels = np.column_stack([sid, vid])
    pvars = vid[:, None] * k + np.arange(k)  # P entries of the block vertex

    lower = LmiGroup("pd_lower", labels, pvars, np.broadcast_to(basis, (nb, k, n, n)).copy(),
                     np.broadcast_to(eps0 * eye, (nb, n, n)).copy())
    upper = LmiGroup(
        "p_upper",
        labels.copy(),
        np.column_stack([pvars, c0 + sid]),
        np.concatenate([np.broadcast_to(-basis, (nb, k, n, n)), np.broadcast_to(eye, (nb, 1, n, n))], axis=1),
        np.zeros((nb, n, n)),
    )

    # gradient rows: D[s,i] -+ [w_e]_i >= 0 with w_e = X^{-1}(P_e(x_b) - P_e(x_0))
    inv = T.shape_inv  # (S, n, n); w = inv @ dv
    wc = np.concatenate([-inv.sum(axis=2, keepdims=True), inv], axis=2)  # (S, n, n+1)
    s_, e_, i_, sg = np.meshgrid(np.arange(S), np.arange(k), np.arange(n), [1.0, -1.0], indexing="ij")
    s_, e_, i_, sg = s_.ravel(), e_.ravel(), i_.ravel(), sg.ravel()
    gvars = np.column_stack([T.simplices[s_] * k + e_[:, None], d0 + s_ * n + i_])
    gcoef = np.column_stack([-sg[:, None] * wc[s_, i_], np.ones(len(s_))])
    grad = LmiGroup("grad_bound", np.column_stack([s_, -np.ones(len(s_), int)]), gvars,
                    gcoef[:, :, None, None], np.zeros((len(s_), 1, 1)))

    # vertex blocks: mu P(x_k) - A(x_k) - h^2 E I >= 0
    J = model.jacobian(T.vertices)[vid]
    fx = model.f(T.vertices)[vid]
    cb = np.einsum("bm,bmj->bj", fx, wc[sid])  # (nb, n+1): f . w expressed in vertex values
    EJ = np.einsum("eij,bjk->beik", basis, J)
    own = mu * basis[None] - EJ - np.swapaxes(EJ, -1, -2)  # (nb, k, n, n)
    coef_p = -cb[:, :, None, None, None] * basis[None, None]  # (nb, n+1, k, n, n)
    coef_p[np.arange(nb), loc] += own
    vvars = (T.simplices[sid][:, :, None] * k + np.arange(k)).reshape(nb, -1)
    h2 = h[sid] ** 2
    coef_c = -(h2 * ec[sid])[:, None, None, None] * eye
    coef_d = np.broadcast_to(-(h2 * ed[sid])[:, None, None, None] * eye, (nb, n, n, n))
    vertex = LmiGroup(
        "vertex",
        labels.copy(),
        np.column_stack([vvars, c0 + sid, d0 + sid[:, None] * n + np.arange(n)]),
        np.concatenate([coef_p.reshape(nb, -1, n, n), coef_c, coef_d], axis=1),
        np.zeros((nb, n, n)),
    )
    groups = [lower, upper, grad, vertex]

    obj = np.zeros(m)
    if minimize_c:
        cm = np.column_stack([np.full(S, m - 1), c0 + np.arange(S)])
        cc = np.tile(np.array([1.0, -1.0])[:, None, None], (S, 1, 1))[:, :, None].reshape(S, 2, 1, 1)
        groups.append(LmiGroup("c_max", np.column_stack([np.arange(S), -np.ones(S, int)]), cm, cc,
                               np.zeros((S, 1, 1))))
        obj[m - 1] = 1.0

    lo = np.full(m, -np.inf)
    hi = np.full(m, np.inf)
    return Op1Problem(
        var_names=names,
        groups=groups,
        var_lo=lo,
        var_hi=hi,
        objective=obj,
        meta={"c_cap": c_cap, "num_vertices": nv, "num_simplices": S, "minimize_c": minimize_c},
        mode="full",
        mu=float(mu),
        eps0=float(eps0),
        h=h,
        B=B,
        B3=B3,
        grid=T.grid_description(),
    )


@dataclass
class MetricSolution:
    status: str
    P: np.ndarray
    C: float
    mu: float
    margin: float
    iterations: int
    worst_block: tuple = None

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def solve_const_feasibility(prob: Op1Problem, margin_rel: float = MARGIN_REL, max_iter: int = 400) -> MetricSolution:
    """Search a constant metric for the given mu; the verdict is checked post hoc."""
    if prob.mode != "const":
        raise ValueError("the in-process solver handles the constant-metric problem only")
    res = solve_lmi_feasibility(prob, margin_rel=margin_rel, max_iter=max_iter)
    status = res.status
    if status == "feasible":
        check = prob.verify(res.y, rel_tol=0.0)
        if not check.ok or check.min_eig < margin_rel * check.scale:
            status = "inconclusive"
    return MetricSolution(
        status=status,
        P=prob.metric(res.y),
        C=prob.c_value(res.y),
        mu=prob.mu,
        margin=res.margin,
        iterations=res.iterations,
        worst_block=(res.worst_group, res.worst_label),
    )


@dataclass
class BisectionResult:
    mu_star: float
    P: np.ndarray
    C: float
    history: list


def bisect_mu(
    T: Triangulation,
    model: SystemModel,
    eps0: float,
    mu_hi: float,
    tol: float,
    c_cap: float = None,
    max_iter: int = 400,
) -> BisectionResult:
    """Smallest mu (to within tol) at which a constant metric is certified."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    history = []

    def attempt(mu):
        sol = solve_const_feasibility(assemble_op1_const(T, model, mu, eps0, c_cap), max_iter=max_iter)
        history.append((float(mu), sol.status))
        log.info("mu=%.6g -> %s (margin %.3e)", mu, sol.status, sol.margin)
        return sol

    best = attempt(mu_hi)
    if not best.feasible:
        raise MetricInfeasibleError(f"no certified metric at mu_hi={mu_hi} ({best.status})")
    lo, hi = 0.0, float(mu_hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        sol = attempt(mid)
        if sol.feasible:
            hi, best = mid, sol
        else:
            lo = mid
    return BisectionResult(mu_star=hi, P=best.P, C=best.C, history=history)


def verify_const_metric(T: Triangulation, model: SystemModel, P, mu: float, eps0: float, rel_tol: float = 1e-8):
    """Solver-independent check of a constant metric at mu."""
    P = np.asarray(P, dtype=float)
    n = T.n
    pairs, _ = sym_basis(n)
    C = float(sym_eigvals(P)[0])
    prob = assemble_op1_const(T, model, mu, eps0, c_cap=max(C, eps0))
    y = np.array([P[i, j] for i, j in pairs] + [C])
    return prob.verify(y, rel_tol=rel_tol)


def vertex_lambda_max(T: Triangulation, model: SystemModel, P) -> np.ndarray:
    """lambda_max(A(x_k), P) with A = P Df + Df^T P at every vertex."""
    P = np.asarray(P, dtype=float)
    J = model.jacobian(T.vertices)
    PJ = P @ J
    return lambda_max_gen(PJ + np.swapaxes(PJ, -1, -2), np.broadcast_to(P, J.shape))
