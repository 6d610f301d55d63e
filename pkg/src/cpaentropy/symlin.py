"""Dense symmetric linear algebra for small matrices.

Everything here works on single ``(n, n)`` matrices as well as on stacks
``(..., n, n)``; the optimization code evaluates thousands of 3x3 blocks at
once, so the Jacobi sweeps are vectorized over the leading axes.
"""

from __future__ import annotations

import numpy as np

JACOBI_TOL = 1e-14
MAX_SWEEPS = 60


class NotPositiveDefiniteError(ValueError):
    pass


class JacobiConvergenceError(RuntimeError):
    pass


def symmetrize(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def matrix_scale(a) -> np.ndarray:
    """max(1, ||A||_max) per matrix; the reference scale for all tolerances."""
    a = np.asarray(a, dtype=float)
    return np.maximum(1.0, np.abs(a).max(axis=(-1, -2)))


def _offdiag_norm(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    mask = ~np.eye(n, dtype=bool)
    return np.sqrt((a[..., mask] ** 2).sum(axis=-1))


def sym_eig(a, tol: float = JACOBI_TOL):
    """Eigen-decomposition of symmetric matrices by cyclic Jacobi rotations.

    Returns ``(w, v)`` with eigenvalues sorted in descending order and the
    matching orthonormal eigenvectors as the columns of ``v``.
    """
    a = symmetrize(a)
    n = a.shape[-1]
    batch = a.shape[:-2]
    a = a.reshape((-1, n, n)).copy()
    m = a.shape[0]
    v = np.broadcast_to(np.eye(n), (m, n, n)).copy()
    fro = np.sqrt((a**2).sum(axis=(1, 2)))
    thresh = tol * np.maximum(fro, np.finfo(float).tiny)

    for _ in range(MAX_SWEEPS):
        if np.all(_offdiag_norm(a) <= thresh):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                active = np.abs(apq) > 1e-300
                if not active.any():
                    continue
                app = a[:, p, p]
                aqq = a[:, q, q]
                safe = np.where(active, apq, 1.0)
                theta = (aqq - app) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                c = 1.0 / np.sqrt(t**2 + 1.0)
                s = t * c
                c = np.where(active, c, 1.0)
                s = np.where(active, s, 0.0)
                # A <- J^T A J with the rotation acting on rows/cols p, q
                ap = a[:, :, p].copy()
                aq = a[:, :, q].copy()
                a[:, :, p] = c[:, None] * ap - s[:, None] * aq
                a[:, :, q] = s[:, None] * ap + c[:, None] * aq
                ap = a[:, p, :].copy()
                aq = a[:, q, :].copy()
                a[:, p, :] = c[:, None] * ap - s[:, None] * aq
                a[:, q, :] = s[:, None] * ap + c[:, None] * aq
                vp = v[:, :, p].copy()
                vq = v[:, :, q].copy()
                v[:, :, p] = c[:, None] * vp - s[:, None] * vq
                v[:, :, q] = s[:, None] * vp + c[:, None] * vq
    else:
        if not np.all(_offdiag_norm(a) <= thresh):
            raise JacobiConvergenceError("Jacobi sweeps did not converge")

    w = np.diagonal(a, axis1=1, axis2=2).copy()
    order = np.argsort(-w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return w.reshape(batch + (n,)), v.reshape(batch + (n, n))


def sym_eigvals(a) -> np.ndarray:
    return sym_eig(a)[0]


def _check_pd(b: np.ndarray, wb: np.ndarray) -> None:
    scale = np.abs(b).max(axis=(-1, -2))
    if np.any(wb[..., -1] <= 1e-12 * scale):
        raise NotPositiveDefiniteError("matrix is not positive definite")


def sqrt_pd(b) -> np.ndarray:
    b = symmetrize(b)
    wb, vb = sym_eig(b)
    _check_pd(b, wb)
    return symmetrize((vb * np.sqrt(wb)[..., None, :]) @ np.swapaxes(vb, -1, -2))


def inv_sqrt_pd(b) -> np.ndarray:
    b = symmetrize(b)
    wb, vb = sym_eig(b)
    _check_pd(b, wb)
    return symmetrize((vb / np.sqrt(wb)[..., None, :]) @ np.swapaxes(vb, -1, -2))


def gen_eig(a, b, vectors: bool = False):
    """Generalized eigenvalues of the pair (A, B), B positive definite.

    Computed as the eigenvalues of B^{-1/2} A B^{-1/2}, descending.  With
    ``vectors=True`` also returns eigenvectors X normalized so that
    X^T B X = I.
    """
    a = symmetrize(a)
    s = inv_sqrt_pd(b)
    c = s @ a @ s
    w, y = sym_eig(c)
    if vectors:
        return w, s @ y
    return w


def lambda_max_gen(a, b) -> np.ndarray:
    return gen_eig(a, b)[..., 0]


def count_positive_gen_eigs(a, b, tol: float = 0.0) -> np.ndarray:
    return (gen_eig(a, b) > tol).sum(axis=-1)


def cond2(p) -> np.ndarray:
    p = symmetrize(p)
    w, _ = sym_eig(p)
    _check_pd(p, w)
    return w[..., 0] / w[..., -1]


def psd_slack(a) -> np.ndarray:
    """Largest eigenvalue of A; A is negative semidefinite iff this is <= 0."""
    return sym_eigvals(a)[..., 0]
