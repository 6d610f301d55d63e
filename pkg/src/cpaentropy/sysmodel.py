"""Vector fields with Jacobians and per-simplex derivative bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import Box, Triangulation


class IntegrationBlowUp(RuntimeError):
    pass


@dataclass(frozen=True)
class SystemModel:
    """An ODE x' = f(x) together with rigorous derivative majorants.

    ``f`` and ``jacobian`` accept points of shape ``(..., n)``.  The bound
    callables receive simplex vertex coordinates of shape ``(..., n+1, n)``
    and return one bound per simplex: ``second_bound`` majorizes all second
    partials of all components of f on the simplex, ``third_bound`` all
    third partials.
    """

    n: int
    f: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    second_bound: Callable[[np.ndarray], np.ndarray]
    third_bound: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def hessian_bounds(self, tri: Triangulation) -> np.ndarray:
        return np.asarray(self.second_bound(tri.vertices[tri.simplices]), dtype=float)

    def third_bounds(self, tri: Triangulation) -> np.ndarray:
        return np.asarray(self.third_bound(tri.vertices[tri.simplices]), dtype=float)


def _constant_bound(value: float):
    def bound(pts):
        return np.full(np.shape(pts)[:-2], float(value))

    return bound


@dataclass(frozen=True)
class LorenzParams:
    sigma: float = 10.0
    r: float = 28.0
    b: float = 8.0 / 3.0
    scale: tuple = (24.5, 100.0, 100.0)

    def __post_init__(self):
        object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))
        if len(self.scale) != 3 or min(self.scale) <= 0:
            raise ValueError(f"scale must be three positive numbers, got {self.scale}")

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "r": self.r, "b": self.b, "scale": list(self.scale)}


def lorenz_scaled(p: LorenzParams = LorenzParams()) -> SystemModel:
    """Lorenz system in the coordinates x = S^{-1} X, S = diag(scale)."""
    s, r, b = p.sigma, p.r, p.b
    sx, sy, sz = p.scale

    def f(x):
        x = np.asarray(x, dtype=float)
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        return np.stack(
            [
                -s * X + s * (sy / sx) * Y,
                r * (sx / sy) * X - Y - (sx * sz / sy) * X * Z,
                -b * Z + (sx * sy / sz) * X * Y,
            ],
            axis=-1,
        )

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        J = np.zeros(x.shape[:-1] + (3, 3))
        J[..., 0, 0] = -s
        J[..., 0, 1] = s * sy / sx
        J[..., 1, 0] = r * sx / sy - (sx * sz / sy) * Z
        J[..., 1, 1] = -1.0
        J[..., 1, 2] = -(sx * sz / sy) * X
        J[..., 2, 0] = (sx * sy / sz) * Y
        J[..., 2, 1] = (sx * sy / sz) * X
        J[..., 2, 2] = -b
        return J

    # the only nonzero second partials are sx*sz/sy and sx*sy/sz
    b2 = sx * max(sy / sz, sz / sy)
    return SystemModel(
        n=3,
        f=f,
        jacobian=jacobian,
        second_bound=_constant_bound(b2),
        third_bound=_constant_bound(0.0),
        name="lorenz",
        params=p.to_dict(),
    )


def _ceil2(v: float) -> float:
    # guard against representation noise like 28.999999999 -> 0.29 staying 0.29
    return math.ceil(round(v * 100.0, 9)) / 100.0


def lorenz_dissipation_bounds(sigma: float, r: float, b: float) -> tuple:
    """Unscaled bounds (|x|, |y|, z_max) on the Levinson dissipation region."""
    if sigma < 1 or b < 2:
        raise ValueError("dissipation bounds need sigma >= 1 and b >= 2")
    ky = b / (2.0 * math.sqrt(b - 1.0))
    y_max = ky * r
    z_max = (1.0 + ky) * r
    lead = (1.0 + (b - 2.0) ** 2 / (4.0 * (b - 1.0))) * (sigma + r) ** 2
    # the published chain subtracts (z_max - (sigma + r))^2; see README
    gap = z_max - (sigma + r)
    x_max = math.sqrt(0.5 * (lead - gap**2))
    return x_max, y_max, z_max


def lorenz_dissipation_box(p: LorenzParams = LorenzParams()) -> Box:
    x_max, y_max, z_max = lorenz_dissipation_bounds(p.sigma, p.r, p.b)
    sx, sy, sz = p.scale
    X = _ceil2(x_max / sx)
    Y = _ceil2(y_max / sy)
    Z = _ceil2(z_max / sz)
    return Box((-X, -Y, 0.0), (X, Y, Z))


def linear_model(A) -> SystemModel:
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("A must be square")

    def f(x):
        return np.asarray(x, dtype=float) @ A.T

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(A, x.shape[:-1] + (n, n)).copy()

    return SystemModel(
        n=n,
        f=f,
        jacobian=jacobian,
        second_bound=_constant_bound(0.0),
        third_bound=_constant_bound(0.0),
        name="linear",
        params={"A": A.tolist()},
    )


def model_from_spec(spec: dict) -> SystemModel:
    kind = spec.get("name", spec.get("kind"))
    if kind == "lorenz":
        params = spec.get("params", spec)
        return lorenz_scaled(
            LorenzParams(
                sigma=params.get("sigma", 10.0),
                r=params.get("r", 28.0),
                b=params.get("b", 8.0 / 3.0),
                scale=tuple(params.get("scale", (24.5, 100.0, 100.0))),
            )
        )
    if kind == "linear":
        params = spec.get("params", spec)
        return linear_model(params["A"])
    raise ValueError(f"unknown model {kind!r}")


def model_to_spec(model: SystemModel) -> dict:
    return {"name": model.name, "params": dict(model.params)}


def integrate_with_variational(
    model: SystemModel,
    x0,
    t: float,
    steps: int,
    blowup: float = 1e6,
):
    """Classical RK4 on the state and the fundamental matrix, X(0) = I.

    ``x0`` may be a single point ``(n,)`` or a batch ``(m, n)``; returns the
    state trajectory ``(steps+1, ..., n)`` and X(t) ``(..., n, n)``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.array(x0, dtype=float)
    n = model.n
    X = np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()
    dt = float(t) / steps
    traj = np.empty((steps + 1,) + x.shape)
    traj[0] = x

    def rhs(xs, Xs):
        return model.f(xs), model.jacobian(xs) @ Xs

    for k in range(steps):
        k1x, k1X = rhs(x, X)
        k2x, k2X = rhs(x + 0.5 * dt * k1x, X + 0.5 * dt * k1X)
        k3x, k3X = rhs(x + 0.5 * dt * k2x, X + 0.5 * dt * k2X)
        k4x, k4X = rhs(x + dt * k3x, X + dt * k3X)
        x = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        X = X + dt / 6.0 * (k1X + 2 * k2X + 2 * k3X + k4X)
        if not np.all(np.isfinite(x)) or np.abs(x).max() > blowup:
            raise IntegrationBlowUp(f"state exceeded {blowup} at step {k + 1}")
        traj[k + 1] = x
    return traj, X
