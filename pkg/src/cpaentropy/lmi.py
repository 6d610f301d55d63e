"""Affine matrix inequalities in block form and a small cutting-plane solver.

A group holds ``nb`` blocks of equal size ``d``; block ``b`` reads

    F_b(y) = sum_t coef[b, t] * y[var_idx[b, t]] - const[b]  >= 0  (PSD).

This is the ``sum F_i y_i - F_0`` layout of SDPA, kept dense per block
because every block touches only a handful of variables.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .symlin import sym_eig

log = logging.getLogger(__name__)


@dataclass
class LmiGroup:
    name: str
    labels: np.ndarray  # (nb, 2): simplex id, vertex id (-1 when not applicable)
    var_idx: np.ndarray  # (nb, t)
    coef: np.ndarray  # (nb, t, d, d)
    const: np.ndarray  # (nb, d, d)

    def __post_init__(self):
        nb, t = self.var_idx.shape
        if self.coef.shape[:2] != (nb, t) or self.const.shape[0] != nb:
            raise ValueError(f"inconsistent shapes in group {self.name}")
        if not (np.all(np.isfinite(self.coef)) and np.all(np.isfinite(self.const))):
            raise ValueError(f"non-finite coefficients in group {self.name}")

    @property
    def size(self) -> int:
        return self.const.shape[-1]

    def __len__(self) -> int:
        return self.const.shape[0]

    def evaluate(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.einsum("btij,bt->bij", self.coef, y[self.var_idx]) - self.const


@dataclass
class LmiBlock:
    """One block viewed on its own: ``sum terms[i] * y_i - const >= 0``."""

    label: tuple
    group: str
    terms: dict
    const: np.ndarray


@dataclass
class LmiProblem:
    var_names: list
    groups: list
    var_lo: np.ndarray
    var_hi: np.ndarray
    objective: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.objective is None:
            self.objective = np.zeros(self.num_vars)

    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    @property
    def num_blocks(self) -> int:
        """Number of matrix (d >= 2, or all when n = 1) inequality blocks."""
        sizes = {g.size for g in self.groups}
        if sizes == {1}:
            return sum(len(g) for g in self.groups)
        return sum(len(g) for g in self.groups if g.size > 1)

    @property
    def num_scalar_rows(self) -> int:
        if {g.size for g in self.groups} == {1}:
            return 0
        return sum(len(g) for g in self.groups if g.size == 1)

    def blocks(self):
        for g in self.groups:
            for b in range(len(g)):
                terms = {}
                for t, v in enumerate(g.var_idx[b]):
                    terms[int(v)] = terms.get(int(v), 0.0) + g.coef[b, t]
                yield LmiBlock(tuple(int(l) for l in g.labels[b]), g.name, terms, g.const[b])

    def min_eigenvalues(self, y):
        """Smallest eigenvalue of every block at ``y``, group by group."""
        return [sym_eig(g.evaluate(y))[0][:, -1] for g in self.groups]

    def scale_at(self, y) -> float:
        return max(1.0, max(float(np.abs(g.evaluate(y)).max()) for g in self.groups if len(g)))

    def verify(self, y, rel_tol: float = 1e-8) -> "LmiCheck":
        y = np.asarray(y, dtype=float)
        worst = (np.inf, None, None)
        for g, w in zip(self.groups, self.min_eigenvalues(y)):
            if len(w) == 0:
                continue
            b = int(np.argmin(w))
            if w[b] < worst[0]:
                worst = (float(w[b]), g.name, tuple(int(l) for l in g.labels[b]))
        scale = self.scale_at(y)
        return LmiCheck(
            ok=worst[0] >= -rel_tol * scale,
            min_eig=worst[0],
            scale=scale,
            worst_group=worst[1],
            worst_label=worst[2],
        )


@dataclass
class LmiCheck:
    ok: bool
    min_eig: float
    scale: float
    worst_group: str
    worst_label: tuple


@dataclass
class FeasibilityResult:
    status: str  # "feasible" | "infeasible" | "inconclusive"
    y: np.ndarray
    margin: float
    lp_bound: float
    iterations: int
    worst_group: str = None
    worst_label: tuple = None

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def _unique_blocks(group: LmiGroup):
    key = np.concatenate(
        [
            group.var_idx.astype(float),
            group.coef.reshape(len(group), -1),
            group.const.reshape(len(group), -1),
        ],
        axis=1,
    )
    _, first = np.unique(key, axis=0, return_index=True)
    first = np.sort(first)
    return LmiGroup(group.name, group.labels[first], group.var_idx[first], group.coef[first], group.const[first])


def _cut_rows(group: LmiGroup, blocks: np.ndarray, vecs: np.ndarray, m: int):
    """Rows of  tau - v^T F_b(y) v <= 0  in the variables (y, tau)."""
    q = np.einsum("ki,ktij,kj->kt", vecs, group.coef[blocks], vecs)
    rhs = -np.einsum("ki,kij,kj->k", vecs, group.const[blocks], vecs)
    rows = np.zeros((len(blocks), m + 1))
    np.add.at(rows, (np.repeat(np.arange(len(blocks)), q.shape[1]), group.var_idx[blocks].ravel()), -q.ravel())
    rows[:, m] = 1.0
    return rows, rhs


def solve_lmi_feasibility(
    prob: LmiProblem,
    margin_rel: float = 1e-8,
    max_iter: int = 400,
    cuts_per_group: int = 40,
) -> FeasibilityResult:
    """Kelley cutting planes on max_y min_b lambda_min(F_b(y)) inside the variable box.

    Every cut v^T F_b(y) v >= tau is implied by F_b(y) >= tau I, so the LP
    optimum bounds the best achievable margin from above: a negative LP
    value proves infeasibility inside the box.  A point is reported
    feasible only after its true block eigenvalues clear the margin.
    """
    m = prob.num_vars
    groups = [_unique_blocks(g) for g in prob.groups if len(g)]
    rows, rhs = [], []
    for g in groups:
        d = g.size
        eye = np.eye(d)
        vecs = [eye[i] for i in range(d)]
        for i in range(d):
            for j in range(i + 1, d):
                vecs.append((eye[i] + eye[j]) / np.sqrt(2))
                vecs.append((eye[i] - eye[j]) / np.sqrt(2))
        for v in vecs:
            blocks = np.arange(len(g))
            r, h = _cut_rows(g, blocks, np.broadcast_to(v, (len(g), d)), m)
            rows.append(r)
            rhs.append(h)

    span = np.maximum(np.abs(prob.var_lo), np.abs(prob.var_hi))
    tau_cap = 1e3 * max(1.0, float(span.max()))
    bounds = list(zip(prob.var_lo, prob.var_hi)) + [(None, tau_cap)]
    cost = np.zeros(m + 1)
    cost[m] = -1.0

    best = None
    lp_bound = np.inf
    for it in range(1, max_iter + 1):
        A = np.vstack(rows)
        b = np.concatenate(rhs)
        res = linprog(cost, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        if res.status != 0:
            raise RuntimeError(f"cutting-plane LP failed: {res.message}")
        y = res.x[:m]
        lp_bound = min(lp_bound, float(res.x[m]))

        worst = (np.inf, None, None)
        new_rows, new_rhs = [], []
        for g in groups:
            F = g.evaluate(y)
            w, v = sym_eig(F)
            lmin = w[:, -1]
            bi = int(np.argmin(lmin))
            if lmin[bi] < worst[0]:
                worst = (float(lmin[bi]), g.name, tuple(int(l) for l in g.labels[bi]))
            order = np.argsort(lmin)[:cuts_per_group]
            r, h = _cut_rows(g, order, v[order, :, -1], m)
            new_rows.append(r)
            new_rhs.append(h)
        scale = prob.scale_at(y)
        margin = worst[0]
        if best is None or margin > best.margin:
            best = FeasibilityResult("inconclusive", y.copy(), margin, lp_bound, it, worst[1], worst[2])
        best.lp_bound = lp_bound
        best.iterations = it
        log.debug("cutting plane it=%d margin=%.3e lp=%.3e", it, margin, lp_bound)
        if margin >= margin_rel * scale:
            best.status = "feasible"
            return best
        if lp_bound < -1e-9 * scale:
            best.status = "infeasible"
            return best
        rows.extend(new_rows)
        rhs.extend(new_rhs)
    return best
