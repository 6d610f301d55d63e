"""Continuous piecewise affine (CPA) scalar and matrix fields."""

from __future__ import annotations

import numpy as np

from .geometry import Simplex, Triangulation, barycentric, locate_for_orbit
from .symlin import sym_eigvals, symmetrize
from .sysmodel import SystemModel


def gradient_from_vertex_values(simplex: Simplex, values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.linalg.solve(simplex.shape_matrix, values[1:] - values[0])


def simplex_gradients(tri: Triangulation, values: np.ndarray) -> np.ndarray:
    """Per-simplex gradients of the CPA interpolant of vertex ``values``.

    ``values`` has shape ``(Nv, *tail)``; the result is ``(S, *tail, n)``.
    """
    v = values[tri.simplices]  # (S, n+1, *tail)
    dv = v[:, 1:] - v[:, :1]
    return np.einsum("sij,sj...->s...i", tri.shape_inv, dv)


class CpaScalarField:
    def __init__(self, tri: Triangulation, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (tri.num_vertices,):
            raise ValueError("one value per vertex expected")
        self.tri = tri
        self.values = values
        self.gradients = simplex_gradients(tri, values)

    def eval(self, x) -> float:
        s = self.tri.locate(x)
        lam = barycentric(self.tri.simplex(s), x)
        return float(lam @ self.values[self.tri.simplices[s]])

    def eval_many(self, xs) -> np.ndarray:
        s = self.tri.locate_many(xs)
        lam = self.tri.barycentric_many(s, xs)
        return (lam * self.values[self.tri.simplices[s]]).sum(axis=1)

    def gradient_l1(self) -> np.ndarray:
        return np.abs(self.gradients).sum(axis=1)


class CpaMatrixField:
    """Vertex-wise symmetric matrices interpolated on each simplex."""

    def __init__(self, tri: Triangulation, values):
        values = symmetrize(values)
        n = tri.n
        if values.shape != (tri.num_vertices, n, n):
            raise ValueError("one n x n matrix per vertex expected")
        self.tri = tri
        self.values = values
        # gradients[s, i, j] is w^s_ij
        self.gradients = simplex_gradients(tri, values)

    @classmethod
    def constant(cls, tri: Triangulation, P) -> "CpaMatrixField":
        P = np.asarray(P, dtype=float)
        return cls(tri, np.broadcast_to(P, (tri.num_vertices,) + P.shape))

    def c_bounds(self) -> np.ndarray:
        """C_nu: the largest eigenvalue of P over the vertices of each simplex."""
        lmax = sym_eigvals(self.values)[:, 0]
        return lmax[self.tri.simplices].max(axis=1)

    def d_bounds(self) -> np.ndarray:
        """D_nu: max over entries (i <= j) of ||w^nu_ij||_1."""
        return np.abs(self.gradients).sum(axis=-1).max(axis=(1, 2))

    def eval(self, x) -> np.ndarray:
        s = self.tri.locate(x)
        lam = barycentric(self.tri.simplex(s), x)
        return symmetrize(np.einsum("k,kij->ij", lam, self.values[self.tri.simplices[s]]))

    def eval_many(self, xs) -> np.ndarray:
        s = self.tri.locate_many(xs)
        lam = self.tri.barycentric_many(s, xs)
        return symmetrize(np.einsum("mk,mkij->mij", lam, self.values[self.tri.simplices[s]]))


def orbital_derivative_scalar(field: CpaScalarField, x, model: SystemModel) -> float:
    fx = model.f(np.asarray(x, dtype=float))
    s = locate_for_orbit(field.tri, x, fx)
    return float(field.gradients[s] @ fx)


def orbital_derivative_matrix(field: CpaMatrixField, x, model: SystemModel) -> np.ndarray:
    fx = model.f(np.asarray(x, dtype=float))
    s = locate_for_orbit(field.tri, x, fx)
    return symmetrize(field.gradients[s] @ fx)
