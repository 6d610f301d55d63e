"""Standard triangulations of axis-aligned boxes.

Grid points follow the layout used for the Lorenz experiments: an axis
whose box interval is symmetric about zero gets ``counts[i]`` steps on each
side of the origin, any other axis gets ``counts[i]`` steps from ``lo`` to
``hi``.  ``offsets[i]`` adds that many extra layers below ``lo``.

Every grid cell is split into n! simplices.  Inside each orthant (measured
from the axis anchor, 0 or ``lo``) the split is the Kuhn/Freudenthal pattern
reflected so that all simplices of a cell share the diagonal pointing away
from the anchor.  Simplex vertices are stored in path order starting at the
cell corner closest to the anchor.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

BARY_TOL = 1e-10


class OutsideDomainError(ValueError):
    pass


class OrbitLeavesDomainError(ValueError):
    """No simplex at the point admits the given direction."""


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi):
            raise ValueError("lo and hi have different lengths")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"degenerate box: lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def n(self) -> int:
        return len(self.lo)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class GridSpec:
    counts: tuple
    offsets: tuple = None

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 1 for c in counts):
            raise ValueError(f"grid counts must be positive: {counts}")
        offsets = (0,) * len(counts) if self.offsets is None else tuple(int(o) for o in self.offsets)
        if len(offsets) != len(counts):
            raise ValueError("counts and offsets have different lengths")
        if any(o < 0 for o in offsets):
            raise ValueError("offsets count extra layers and must be >= 0")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "offsets", offsets)

    def to_dict(self) -> dict:
        return {"counts": list(self.counts), "offsets": list(self.offsets)}


@dataclass(frozen=True)
class Simplex:
    index: int
    vertex_ids: tuple
    vertices: np.ndarray
    shape_matrix: np.ndarray
    diameter: float


def _perm_code(perms: np.ndarray, n: int) -> np.ndarray:
    return (perms * (n ** np.arange(n - 1, -1, -1))).sum(axis=-1)


@dataclass(eq=False)
class Triangulation:
    box: Box
    grid: GridSpec
    anchor: np.ndarray
    step: np.ndarray
    index_lo: np.ndarray  # smallest grid index per axis
    index_hi: np.ndarray  # largest grid index per axis
    vertices: np.ndarray  # (Nv, n)
    simplices: np.ndarray  # (S, n+1) vertex ids
    shape: np.ndarray  # (S, n, n), rows x_k - x_0
    shape_inv: np.ndarray  # (S, n, n)
    diameters: np.ndarray  # (S,)
    perms: np.ndarray = field(repr=False)  # (n!, n)
    _perm_lookup: np.ndarray = field(repr=False)
    _incident: list = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_simplices(self) -> int:
        return self.simplices.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return self.anchor + self.step * self.index_lo

    @property
    def upper(self) -> np.ndarray:
        return self.anchor + self.step * self.index_hi

    def grid_description(self) -> dict:
        return {"box": self.box.to_dict(), "grid": self.grid.to_dict()}

    def simplex(self, s: int) -> Simplex:
        ids = self.simplices[s]
        return Simplex(
            index=int(s),
            vertex_ids=tuple(int(i) for i in ids),
            vertices=self.vertices[ids],
            shape_matrix=self.shape[s],
            diameter=float(self.diameters[s]),
        )

    def incident_simplices(self, vertex_id: int) -> np.ndarray:
        if self._incident is None:
            order = np.argsort(self.simplices.ravel(), kind="stable")
            owners = order // (self.n + 1)
            counts = np.bincount(self.simplices.ravel(), minlength=self.num_vertices)
            self._incident = np.split(owners, np.cumsum(counts)[:-1])
        return self._incident[vertex_id]

    def vertex_max_over_incident(self, per_simplex: np.ndarray) -> np.ndarray:
        """Per vertex, max of a per-simplex quantity over incident simplices."""
        out = np.full(self.num_vertices, -np.inf)
        for k in range(self.n + 1):
            np.maximum.at(out, self.simplices[:, k], per_simplex)
        return out

    # -- point location -------------------------------------------------

    def grid_coords(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.anchor) / self.step

    def contains(self, x, tol: float = BARY_TOL) -> np.ndarray:
        u = self.grid_coords(x)
        return np.all((u >= self.index_lo - tol) & (u <= self.index_hi + tol), axis=-1)

    def _simplex_index(self, cells: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Simplex id inside ``cells`` (lower grid index) containing grid point ``u``."""
        n = self.n
        start = np.where(cells >= 0, cells, cells + 1)
        sign = np.where(cells >= 0, 1.0, -1.0)
        local = (u - start) * sign
        perm = np.argsort(-local, axis=-1, kind="stable")
        pidx = self._perm_lookup[_perm_code(perm, n)]
        ncell = self.index_hi - self.index_lo
        lin = np.ravel_multi_index(tuple((cells - self.index_lo).T), tuple(ncell))
        return lin * math.factorial(n) + pidx

    def locate_many(self, xs) -> np.ndarray:
        """Vectorized location of points; ties on shared faces are broken arbitrarily."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if not np.all(self.contains(xs)):
            raise OutsideDomainError("point outside the triangulated domain")
        u = self.grid_coords(xs)
        cells = np.clip(np.floor(u).astype(int), self.index_lo, self.index_hi - 1)
        return self._simplex_index(cells, u)

    def barycentric_many(self, simplex_ids, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        simplex_ids = np.asarray(simplex_ids)
        x0 = self.vertices[self.simplices[simplex_ids, 0]]
        mu = np.einsum("sji,sj->si", self.shape_inv[simplex_ids], xs - x0)
        return np.concatenate([1.0 - mu.sum(axis=1, keepdims=True), mu], axis=1)

    def _candidate_simplices(self, x: np.ndarray) -> list:
        u = self.grid_coords(x)
        axes = []
        for i, ui in enumerate(u):
            r = round(ui)
            if abs(ui - r) <= BARY_TOL * max(1.0, abs(ui)):
                opts = [c for c in (r - 1, r) if self.index_lo[i] <= c < self.index_hi[i]]
            else:
                opts = [int(np.clip(math.floor(ui), self.index_lo[i], self.index_hi[i] - 1))]
            axes.append(opts)
        nf = math.factorial(self.n)
        ncell = self.index_hi - self.index_lo
        out = []
        for cell in itertools.product(*axes):
            lin = np.ravel_multi_index(tuple(np.asarray(cell) - self.index_lo), tuple(ncell))
            out.extend(range(lin * nf, (lin + 1) * nf))
        return sorted(out)

    def locate(self, x) -> int:
        """Lowest-index simplex containing ``x``."""
        x = np.asarray(x, dtype=float)
        if not self.contains(x):
            raise OutsideDomainError(f"point {x} outside the triangulated domain")
        for s in self._candidate_simplices(x):
            if barycentric(self.simplex(s), x, strict=False).min() >= -BARY_TOL:
                return s
        raise OutsideDomainError(f"no simplex contains {x}")


def _anchor_and_step(box: Box, grid: GridSpec):
    lo = np.array(box.lo)
    hi = np.array(box.hi)
    counts = np.array(grid.counts)
    sym = np.isclose(lo, -hi, rtol=0.0, atol=1e-14 * np.maximum(1.0, np.abs(hi)))
    anchor = np.where(sym, 0.0, lo)
    step = np.where(sym, hi / counts, (hi - lo) / counts)
    index_lo = np.where(sym, -counts, 0) - np.array(grid.offsets)
    index_hi = counts
    return anchor, step, index_lo, index_hi


def build_box_triangulation(box: Box, grid: GridSpec) -> Triangulation:
    n = box.n
    if len(grid.counts) != n:
        raise ValueError(f"box has dimension {n} but grid has {len(grid.counts)} axes")
    anchor, step, index_lo, index_hi = _anchor_and_step(box, grid)
    nvert = index_hi - index_lo + 1
    ncell = index_hi - index_lo

    axes = [np.arange(a, b + 1) for a, b in zip(index_lo, index_hi)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    vertices = anchor + step * mesh

    perms = np.array(list(itertools.permutations(range(n))), dtype=int).reshape(-1, n)
    lookup = np.full(n**n, -1, dtype=int)
    lookup[_perm_code(perms, n)] = np.arange(len(perms))

    cell_axes = [np.arange(a, b) for a, b in zip(index_lo, index_hi)]
    cells = np.stack(np.meshgrid(*cell_axes, indexing="ij"), axis=-1).reshape(-1, n)
    start = np.where(cells >= 0, cells, cells + 1)
    sign = np.where(cells >= 0, 1, -1)

    # path vertices: x_0 = start, x_k = x_{k-1} + sign * e_{perm[k-1]}
    nf = len(perms)
    idx = np.empty((len(cells), nf, n + 1, n), dtype=int)
    idx[:, :, 0, :] = start[:, None, :]
    eye = np.eye(n, dtype=int)
    for k in range(1, n + 1):
        stepv = eye[perms[:, k - 1]][None, :, :] * sign[:, None, :]
        idx[:, :, k, :] = idx[:, :, k - 1, :] + stepv
    idx = idx.reshape(-1, n + 1, n)
    simplices = np.ravel_multi_index(tuple(np.moveaxis(idx - index_lo, -1, 0)), tuple(nvert))

    pts = vertices[simplices]
    shape = pts[:, 1:, :] - pts[:, :1, :]
    shape_inv = np.linalg.inv(shape)
    diff = pts[:, :, None, :] - pts[:, None, :, :]
    diameters = np.sqrt((diff**2).sum(axis=-1)).max(axis=(1, 2))
    return Triangulation(
        box=box,
        grid=grid,
        anchor=anchor,
        step=step,
        index_lo=index_lo,
        index_hi=index_hi,
        vertices=vertices,
        simplices=simplices,
        shape=shape,
        shape_inv=shape_inv,
        diameters=diameters,
        perms=perms,
        _perm_lookup=lookup,
    )


def barycentric(simplex: Simplex, x, tol: float = BARY_TOL, strict: bool = True) -> np.ndarray:
    """Barycentric weights of ``x`` in ``simplex``.

    Raises OutsideDomainError if a weight falls below ``-tol`` and ``strict``.
    """
    x = np.asarray(x, dtype=float)
    mu = np.linalg.solve(simplex.shape_matrix.T, x - simplex.vertices[0])
    lam = np.concatenate([[1.0 - mu.sum()], mu])
    if strict and (lam.min() < -tol or lam.max() > 1.0 + tol):
        raise OutsideDomainError(f"point {x} is outside simplex {simplex.index}")
    return lam


def locate_for_orbit(tri: Triangulation, x, direction) -> int:
    """Simplex containing ``x`` that also contains ``x + t*direction`` for small t > 0.

    Among qualifying simplices the lowest index wins; a zero direction
    therefore returns the lowest-index simplex containing ``x``.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(direction, dtype=float)
    if not tri.contains(x):
        raise OutsideDomainError(f"point {x} outside the triangulated domain")
    dscale = max(np.abs(d / tri.step).max(), 1e-300)
    for s in tri._candidate_simplices(x):
        inv_t = tri.shape_inv[s].T
        x0 = tri.vertices[tri.simplices[s, 0]]
        mu = inv_t @ (x - x0)
        lam = np.concatenate([[1.0 - mu.sum()], mu])
        if lam.min() < -BARY_TOL:
            continue
        dmu = inv_t @ d
        rate = np.concatenate([[-dmu.sum()], dmu]) / dscale
        on_face = lam <= BARY_TOL
        if np.all(rate[on_face] >= -BARY_TOL):
            return s
    raise OrbitLeavesDomainError(f"direction {d} leaves the domain at {x}")


def is_refinement(coarse: Triangulation, fine: Triangulation, tol: float = 1e-9) -> bool:
    """True when both cover the same box and every fine simplex lies in one coarse simplex."""
    if coarse.n != fine.n:
        return False
    if not (np.allclose(coarse.lower, fine.lower, atol=tol) and np.allclose(coarse.upper, fine.upper, atol=tol)):
        return False
    pts = fine.vertices[fine.simplices]
    centroids = pts.mean(axis=1)
    host = coarse.locate_many(centroids)
    n1 = fine.n + 1
    lam = coarse.barycentric_many(np.repeat(host, n1), pts.reshape(-1, fine.n))
    return bool(lam.min() >= -tol)


def containing_coarse_simplex(coarse: Triangulation, fine: Triangulation) -> np.ndarray:
    pts = fine.vertices[fine.simplices]
    return coarse.locate_many(pts.mean(axis=1))
