"""Vertex eigenvalue bounds, the Lyapunov-type LP for Q, and certificates.

LP variables: V(x_k) for every vertex, ``n`` gradient auxiliaries per simplex
(D^V = their sum) and Q.  Rows, simplex by simplex:

    +-[grad V]_i - a_i <= 0                                   (2n rows)
    grad V . f(x_k) + err * sum_i a_i - Q <= -m mu(x_k)        (n+1 rows)
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .cpa import CpaScalarField, simplex_gradients
from .geometry import Box, GridSpec, Triangulation, build_box_triangulation, is_refinement
from .lmi import LmiGroup, LmiProblem
from .metricopt import e_value
from .symlin import cond2, count_positive_gen_eigs, gen_eig, lambda_max_gen, psd_slack, symmetrize
from .sysmodel import SystemModel, model_from_spec, model_to_spec

log = logging.getLogger(__name__)

CERT_VERSION = 1


class LpSolveError(RuntimeError):
    pass


class NotRefinementError(ValueError):
    pass


@dataclass
class VertexMuTable:
    values: np.ndarray
    provenance: str = "direct-formula"
    lambda_max: np.ndarray = None
    correction: np.ndarray = None

    def __len__(self) -> int:
        return len(self.values)

    def shifted(self, c: float) -> "VertexMuTable":
        return VertexMuTable(self.values + c, "shifted", self.lambda_max, self.correction)

    def clamped(self) -> "VertexMuTable":
        return VertexMuTable(np.maximum(self.values, 0.0), self.provenance, self.lambda_max, self.correction)


def const_metric_a(model: SystemModel, P, xs) -> np.ndarray:
    """A(x) = P Df(x) + Df(x)^T P at points ``xs`` (m, n)."""
    J = model.jacobian(np.asarray(xs, dtype=float))
    PJ = np.asarray(P, dtype=float) @ J
    return PJ + np.swapaxes(PJ, -1, -2)


def vertex_mu_simplified(Tstar: Triangulation, model: SystemModel, P, C: float = None) -> VertexMuTable:
    """mu(x_k) = lambda_max(A(x_k), P) + h^2 2n^3 B3 kappa_2(P) at every vertex."""
    P = symmetrize(P)
    n = Tstar.n
    kappa = float(cond2(P))  # raises if P is not positive definite
    if C is not None and C < float(gen_eig(P, np.eye(n))[0]) * (1 - 1e-12):
        raise ValueError("C must bound the largest eigenvalue of P")
    A = const_metric_a(model, P, Tstar.vertices)
    lmax = lambda_max_gen(A, np.broadcast_to(P, A.shape))
    h = Tstar.vertex_max_over_incident(Tstar.diameters)
    b3 = Tstar.vertex_max_over_incident(model.third_bounds(Tstar))
    corr = h**2 * 2.0 * n**3 * b3 * kappa
    return VertexMuTable(lmax + corr, "direct-formula", lmax, corr)


def conservative_err_bound(Tstar: Triangulation, model: SystemModel) -> np.ndarray:
    """h_xi^2 n B*_xi per simplex."""
    return Tstar.diameters**2 * Tstar.n * model.hessian_bounds(Tstar)


@dataclass
class LpProblem:
    c: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    num_vertices: int
    num_simplices: int
    n: int
    m_tilde: int
    err_bound: np.ndarray

    @property
    def num_vars(self) -> int:
        return len(self.c)

    @property
    def num_constraints(self) -> int:
        return self.A_ub.shape[0]

    @property
    def q_index(self) -> int:
        return self.num_vars - 1

    def var_name(self, j: int) -> str:
        if j < self.num_vertices:
            return f"V[{j}]"
        if j < self.q_index:
            s, i = divmod(j - self.num_vertices, self.n)
            return f"a[{s},{i}]"
        return "Q"

    def split(self, x):
        x = np.asarray(x, dtype=float)
        nv = self.num_vertices
        return x[:nv], x[nv : self.q_index].reshape(self.num_simplices, self.n), float(x[self.q_index])


def _vertex_row_coefficients(Tstar: Triangulation, model: SystemModel):
    """Coefficients of V(x_b) in grad V_xi . f(x_k), shape (S, n+1 [k], n+1 [b])."""
    inv = Tstar.shape_inv
    wc = np.concatenate([-inv.sum(axis=2, keepdims=True), inv], axis=2)  # (S, n, n+1)
    fx = model.f(Tstar.vertices)[Tstar.simplices]  # (S, n+1, n)
    return wc, np.einsum("skm,smb->skb", fx, wc)


def assemble_lp(
    Tstar: Triangulation,
    model: SystemModel,
    mu_table: VertexMuTable,
    m_tilde: int,
    err_bound=None,
) -> LpProblem:
    if len(mu_table) != Tstar.num_vertices:
        raise ValueError("mu table does not match the triangulation")
    if m_tilde < 1:
        raise ValueError("m_tilde must be >= 1")
    n, nv, S = Tstar.n, Tstar.num_vertices, Tstar.num_simplices
    err = conservative_err_bound(Tstar, model) if err_bound is None else np.asarray(err_bound, dtype=float)
    if err.shape != (S,):
        raise ValueError("err_bound needs one value per simplex")
    a0 = nv
    q = nv + S * n
    m = q + 1
    wc, cv = _vertex_row_coefficients(Tstar, model)
    simp = Tstar.simplices

    # gradient rows: sign * sum_b wc[s,i,b] V_b - a[s,i] <= 0
    s_, i_, g_ = np.meshgrid(np.arange(S), np.arange(n), [1.0, -1.0], indexing="ij")
    s_, i_, g_ = s_.ravel(), i_.ravel(), g_.ravel()
    r_grad = np.arange(len(s_))
    rows = [np.repeat(r_grad, n + 1), r_grad]
    cols = [simp[s_].ravel(), a0 + s_ * n + i_]
    vals = [(g_[:, None] * wc[s_, i_]).ravel(), -np.ones(len(s_))]

    # vertex rows
    base = len(s_)
    s2, k2 = np.meshgrid(np.arange(S), np.arange(n + 1), indexing="ij")
    s2, k2 = s2.ravel(), k2.ravel()
    r_v = base + np.arange(len(s2))
    rows += [np.repeat(r_v, n + 1), np.repeat(r_v, n), r_v]
    cols += [simp[s2].ravel(), (a0 + s2[:, None] * n + np.arange(n)).ravel(), np.full(len(s2), q)]
    vals += [cv[s2, k2].ravel(), np.repeat(err[s2], n), -np.ones(len(s2))]

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(base + len(s2), m),
    ).tocsr()
    A.sum_duplicates()
    b = np.concatenate([np.zeros(base), -m_tilde * mu_table.values[simp[s2, k2]]])
    c = np.zeros(m)
    c[q] = 1.0
    lo = np.full(m, -np.inf)
    hi = np.full(m, np.inf)
    lo[0] = hi[0] = 0.0  # V is defined up to a constant
    lo[a0:q] = 0.0
    return LpProblem(c, A, b, lo, hi, nv, S, n, int(m_tilde), err)


@dataclass
class LpSolution:
    V: np.ndarray
    aux: np.ndarray
    Q: float
    status: str
    seconds: float
    max_row_violation: float


def lp_row_violation(prob: LpProblem, x) -> float:
    return float(np.max(prob.A_ub @ x - prob.b_ub, initial=-np.inf))


def solve_lp(prob: LpProblem, time_limit: float = None, method: str = "highs-ipm") -> LpSolution:
    """Solve with HiGHS; interior point (with crossover) scales best on 3-d grids."""
    t0 = time.perf_counter()
    opts = {"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9}
    if time_limit is not None:
        opts["time_limit"] = float(time_limit)
    res = linprog(
        prob.c,
        A_ub=prob.A_ub,
        b_ub=prob.b_ub,
        bounds=np.column_stack([prob.lo, prob.hi]),
        method=method,
        options=opts,
    )
    dt = time.perf_counter() - t0
    if res.status != 0 or res.x is None:
        raise LpSolveError(f"LP solver stopped: {res.message}")
    V, aux, Q = prob.split(res.x)
    return LpSolution(V, aux, Q, "optimal", dt, lp_row_violation(prob, res.x))


# ---------------------------------------------------------------- certificates


def _arr(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


@dataclass
class EntropyCertificate:
    model: dict
    box: dict
    grid_star: dict
    P: np.ndarray
    mu_table: np.ndarray
    V: np.ndarray
    m_tilde: int
    Q: float
    eps0: float
    mu: float
    err_mode: str = "conservative"
    err_bound: np.ndarray = None
    grid_metric: dict = None
    tolerances: dict = field(default_factory=lambda: {"rel": 1e-6})
    solver: dict = field(default_factory=dict)

    def triangulation(self) -> Triangulation:
        box = Box(tuple(self.box["lo"]), tuple(self.box["hi"]))
        return build_box_triangulation(box, GridSpec(tuple(self.grid_star["counts"]), tuple(self.grid_star["offsets"])))

    @property
    def bound(self) -> float:
        return max(0.0, self.Q) / (2.0 * np.log(2.0))

    def to_json(self) -> str:
        d = asdict(self)
        for key in ("P", "mu_table", "V", "err_bound"):
            d[key] = _arr(getattr(self, key))
        d["version"] = CERT_VERSION
        return json.dumps(d, sort_keys=True, indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "EntropyCertificate":
        d = json.loads(text)
        d.pop("version", None)
        for key in ("P", "mu_table", "V", "err_bound"):
            if d.get(key) is not None:
                d[key] = np.asarray(d[key], dtype=float)
        return cls(**d)

    @classmethod
    def load(cls, path) -> "EntropyCertificate":
        return cls.from_json(Path(path).read_text())


@dataclass
class VerificationReport:
    ok: bool
    vertex_row_violations: int
    max_vertex_excess: float
    vertex_lmi_violations: int
    sample_lmi_violations: int
    sample_orbital_violations: int
    samples: int
    max_positive_gen_eigs: int
    Q_recomputed: float
    messages: list = field(default_factory=list)


def verify_certificate(
    cert: EntropyCertificate,
    model: SystemModel = None,
    samples: int = 10_000,
    tol: float = None,
    seed: int = 0,
) -> VerificationReport:
    """Re-check a certificate from its stored numbers only.

    Vertex rows use the recomputed ||grad V||_1 rather than stored
    auxiliaries; sampled points check A(x) - mu(x) P <= 0 with mu the CPA
    interpolant of the table and the orbital derivative of V.
    """
    model = model or model_from_spec(cert.model)
    tol = cert.tolerances.get("rel", 1e-6) if tol is None else tol
    T = cert.triangulation()
    msgs = []
    P = symmetrize(cert.P)
    mu = np.asarray(cert.mu_table, dtype=float)
    V = np.asarray(cert.V, dtype=float)
    if mu.shape != (T.num_vertices,) or V.shape != (T.num_vertices,):
        return VerificationReport(False, -1, np.inf, -1, -1, -1, 0, -1, np.nan, ["table sizes do not match grid"])
    err = conservative_err_bound(T, model) if cert.err_bound is None else np.asarray(cert.err_bound, dtype=float)
    m = int(cert.m_tilde)
    Qtol = tol * max(1.0, abs(cert.Q))

    grads = simplex_gradients(T, V)  # (S, n)
    dv = np.abs(grads).sum(axis=1)
    fx = model.f(T.vertices)[T.simplices]  # (S, n+1, n)
    lhs = np.einsum("sn,skn->sk", grads, fx) + (err * dv)[:, None] + m * mu[T.simplices]
    excess = lhs - cert.Q
    row_viol = int((excess > Qtol).sum())
    if row_viol:
        msgs.append(f"{row_viol} vertex rows exceed Q (max excess {excess.max():.3e})")

    A = const_metric_a(model, P, T.vertices)
    slack = psd_slack(A - mu[:, None, None] * P)
    scale = np.maximum(1.0, np.abs(A).max(axis=(1, 2)))
    vlmi = int((slack > tol * scale).sum())
    if vlmi:
        msgs.append(f"{vlmi} vertices with A - mu P not negative semidefinite")

    rng = np.random.default_rng(seed)
    xs = rng.uniform(T.lower, T.upper, size=(samples, T.n))
    sid = T.locate_many(xs)
    lam = T.barycentric_many(sid, xs)
    mu_x = (lam * mu[T.simplices[sid]]).sum(axis=1)
    Ax = const_metric_a(model, P, xs)
    sslack = psd_slack(Ax - mu_x[:, None, None] * P)
    sscale = np.maximum(1.0, np.abs(Ax).max(axis=(1, 2)))
    s_lmi = int((sslack > tol * sscale).sum())
    orb = np.einsum("mn,mn->m", grads[sid], model.f(xs)) + m * mu_x
    s_orb = int((orb > cert.Q + Qtol).sum())
    if s_lmi:
        msgs.append(f"{s_lmi} sampled points with A - mu P not negative semidefinite")
    if s_orb:
        msgs.append(f"{s_orb} sampled points with V' + m mu > Q")
    npos = count_positive_gen_eigs(np.concatenate([A, Ax]), np.broadcast_to(P, (len(A) + len(Ax),) + P.shape), tol=1e-9)
    max_pos = int(npos.max())
    if max_pos > m:
        msgs.append(f"observed {max_pos} positive generalized eigenvalues > m_tilde={m} (diagnostic)")
    ok = row_viol == 0 and vlmi == 0 and s_lmi == 0 and s_orb == 0
    return VerificationReport(
        ok=ok,
        vertex_row_violations=row_viol,
        max_vertex_excess=float(excess.max()),
        vertex_lmi_violations=vlmi,
        sample_lmi_violations=s_lmi,
        sample_orbital_violations=s_orb,
        samples=samples,
        max_positive_gen_eigs=max_pos,
        Q_recomputed=float(lhs.max()),
        messages=msgs,
    )


def estimate_m_tilde(Tstar: Triangulation, model: SystemModel, P, tol: float = 1e-9, samples: int = 10_000, seed: int = 0):
    """Largest number of positive generalized eigenvalues seen at vertices and samples.

    This is evidence, not a proof.
    """
    P = symmetrize(P)
    rng = np.random.default_rng(seed)
    xs = np.concatenate([Tstar.vertices, rng.uniform(Tstar.lower, Tstar.upper, size=(samples, Tstar.n))])
    A = const_metric_a(model, P, xs)
    counts = count_positive_gen_eigs(A, np.broadcast_to(P, A.shape), tol=tol)
    nv = Tstar.num_vertices
    diag = {
        "vertex_max": int(counts[:nv].max()),
        "sample_max": int(counts[nv:].max()) if samples else None,
        "histogram": np.bincount(counts, minlength=Tstar.n + 1).tolist(),
        "proof": False,
    }
    return int(counts.max()), diag


# ------------------------------------------------------ monolithic export form


def assemble_op2_full_sdp(
    T: Triangulation,
    Tstar: Triangulation,
    model: SystemModel,
    P_field,
    m_tilde: int,
    err_bound=None,
) -> LmiProblem:
    """mu(x_k), V and Q as joint unknowns, for export to an external SDP solver.

    Blocks (>= 0 form), per simplex xi of T* inside nu of T and vertex x_k:
        mu_k P(x_k) - h^2 2n sqrt(n) D_nu sum_i b_i I - A(x_k) - h^2 E_nu I
    plus the gradient rows for mu and V and the Q rows as 1x1 blocks.
    """
    if not is_refinement(T, Tstar):
        raise NotRefinementError("the fine triangulation does not refine the coarse one")
    from .geometry import containing_coarse_simplex

    n, nv, S = Tstar.n, Tstar.num_vertices, Tstar.num_simplices
    eye = np.eye(n)
    nu = containing_coarse_simplex(T, Tstar)  # (S,)
    C = P_field.c_bounds()
    D = P_field.d_bounds()
    E = e_value(n, model.hessian_bounds(T), model.third_bounds(T), D, C)
    err = conservative_err_bound(Tstar, model) if err_bound is None else np.asarray(err_bound, dtype=float)

    mu0, v0 = 0, nv
    bm0 = 2 * nv
    bv0 = bm0 + S * n
    q = bv0 + S * n
    names = [f"mu[{k}]" for k in range(nv)] + [f"V[{k}]" for k in range(nv)]
    names += [f"b[{s},{i}]" for s in range(S) for i in range(n)]
    names += [f"a[{s},{i}]" for s in range(S) for i in range(n)]
    names.append("Q")

    simp = Tstar.simplices
    s_, k_ = np.meshgrid(np.arange(S), np.arange(n + 1), indexing="ij")
    s_, k_ = s_.ravel(), k_.ravel()
    vid = simp[s_, k_]
    x = Tstar.vertices[vid]
    Pk = P_field.eval_many(x)
    # A uses the P-gradient of the coarse simplex containing xi
    J = model.jacobian(x)
    PJ = Pk @ J
    fx = model.f(x)
    A = PJ + np.swapaxes(PJ, -1, -2) + np.einsum("bijm,bm->bij", P_field.gradients[nu[s_]], fx)
    h2 = Tstar.diameters[s_] ** 2
    cD = -(h2 * 2 * n * np.sqrt(n) * D[nu[s_]])
    lmi = LmiGroup(
        "mu_lmi",
        np.column_stack([s_, vid]),
        np.column_stack([mu0 + vid, bm0 + s_[:, None] * n + np.arange(n)]),
        np.concatenate([Pk[:, None], np.broadcast_to(cD[:, None, None, None] * eye, (len(s_), n, n, n))], axis=1),
        A + (h2 * E[nu[s_]])[:, None, None] * eye,
    )

    inv = Tstar.shape_inv
    wc = np.concatenate([-inv.sum(axis=2, keepdims=True), inv], axis=2)

    def grad_rows(name, val0, aux0):
        ss, ii, gg = np.meshgrid(np.arange(S), np.arange(n), [1.0, -1.0], indexing="ij")
        ss, ii, gg = ss.ravel(), ii.ravel(), gg.ravel()
        idx = np.column_stack([val0 + simp[ss], aux0 + ss * n + ii])
        cf = np.column_stack([-gg[:, None] * wc[ss, ii], np.ones(len(ss))])
        return LmiGroup(name, np.column_stack([ss, -np.ones(len(ss), int)]), idx, cf[:, :, None, None],
                        np.zeros((len(ss), 1, 1)))

    # Q - grad V . f(x_k) - err sum a - m mu_k >= 0
    cv = np.einsum("skm,smb->skb", model.f(Tstar.vertices)[simp], wc)
    idx = np.column_stack([v0 + simp[s_], bv0 + s_[:, None] * n + np.arange(n), mu0 + vid, np.full(len(s_), q)])
    cf = np.column_stack([-cv[s_, k_], -np.repeat(err[s_], n).reshape(-1, n), np.full(len(s_), -float(m_tilde)),
                          np.ones(len(s_))])
    qrows = LmiGroup("q_rows", np.column_stack([s_, vid]), idx, cf[:, :, None, None], np.zeros((len(s_), 1, 1)))

    obj = np.zeros(len(names))
    obj[q] = 1.0
    return LmiProblem(
        var_names=names,
        groups=[lmi, grad_rows("mu_grad", mu0, bm0), grad_rows("v_grad", v0, bv0), qrows],
        var_lo=np.full(len(names), -np.inf),
        var_hi=np.full(len(names), np.inf),
        objective=obj,
        meta={"m_tilde": int(m_tilde), "num_vertices": nv, "num_simplices": S, "sense": "minimize"},
    )
