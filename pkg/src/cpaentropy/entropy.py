"""Entropy bounds from optimization outputs, plus reference values and oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Triangulation
from .lyapopt import const_metric_a, vertex_mu_simplified
from .symlin import NotPositiveDefiniteError, gen_eig, sym_eigvals, symmetrize
from .sysmodel import SystemModel, integrate_with_variational

LN2 = math.log(2.0)


class MetricNotVerifiedError(ValueError):
    pass


@dataclass
class EntropyReport:
    bound: float  # clamped at 0, bits per unit time
    raw_bound: float
    Lambda: float
    m_tilde: int
    variant: str
    timings: dict = field(default_factory=dict)
    sizes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "bound_bits_per_unit_time": self.bound,
            "raw_bound": self.raw_bound,
            "Lambda": self.Lambda,
            "m_tilde": self.m_tilde,
            "variant": self.variant,
            "timings": dict(self.timings),
            "sizes": dict(self.sizes),
        }


def bound_from_Q(Q: float) -> float:
    """Bits per unit time certified by the constant Q: Q / (2 ln 2)."""
    return float(Q) / (2.0 * LN2)


def report_from_Lambda(Lambda: float, m_tilde: int, variant: str, **extra) -> EntropyReport:
    raw = bound_from_Q(Lambda)
    return EntropyReport(max(0.0, raw), raw, float(Lambda), int(m_tilde), variant, **extra)


def const_p_bound(T: Triangulation, model: SystemModel, P, m_tilde: int) -> EntropyReport:
    """Lambda = m * max_k mu(x_k) for a constant metric, i.e. V = const."""
    P = symmetrize(P)
    w = sym_eigvals(P)
    if not np.all(np.isfinite(P)) or w[-1] <= 0:
        raise MetricNotVerifiedError("P is not positive definite")
    try:
        table = vertex_mu_simplified(T, model, P)
    except NotPositiveDefiniteError as exc:
        raise MetricNotVerifiedError(str(exc)) from exc
    mu_max = float(table.values.max())
    return report_from_Lambda(
        m_tilde * mu_max,
        m_tilde,
        "constant-metric",
        sizes={"vertices": T.num_vertices, "simplices": T.num_simplices, "mu_max": mu_max},
    )


def analytic_lorenz_bound(sigma: float, r: float) -> float:
    """Closed-form Lorenz estimate (sqrt((s-1)^2 + 4 r s) - (s+1)) / (2 ln 2)."""
    disc = (sigma - 1.0) ** 2 + 4.0 * r * sigma
    if disc < 0:
        raise ValueError("negative discriminant")
    return (math.sqrt(disc) - (sigma + 1.0)) / (2.0 * LN2)


def attractor_samples(model: SystemModel, starts, t_transient: float = 20.0, dt: float = 1e-3) -> np.ndarray:
    """Push ``starts`` forward for a transient so they settle on the attractor."""
    steps = max(1, int(round(t_transient / dt)))
    traj, _ = integrate_with_variational(model, starts, t_transient, steps)
    return traj[-1]


def empirical_entropy_estimate(model: SystemModel, starts, t: float, dt: float = 1e-3) -> float:
    """max over starts of (1/t) sum_i max(0, log2 alpha_i), alpha_i the singular values of X(t).

    This is a finite-time diagnostic, not a bound.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    steps = max(1, int(round(t / dt)))
    _, X = integrate_with_variational(model, starts, t, steps)
    if not np.all(np.isfinite(X)):
        raise FloatingPointError("fundamental matrix overflowed")
    alpha = np.linalg.svd(X, compute_uv=False)
    rates = np.maximum(0.0, np.log2(alpha)).sum(axis=-1) / t
    return float(rates.max())


def lambda_d_diagnostic(T: Triangulation, model: SystemModel, P) -> np.ndarray:
    """max over vertices of sum_{i<=d} lambda_i(A, P) for d = 1..n."""
    P = symmetrize(P)
    A = const_metric_a(model, P, T.vertices)
    w = gen_eig(A, np.broadcast_to(P, A.shape))  # descending
    return np.cumsum(w, axis=-1).max(axis=0)
