"""Run configuration (JSON) with defaults for the scaled Lorenz run."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .geometry import Box
from .sysmodel import LorenzParams, lorenz_dissipation_box, model_from_spec

# constant metric reported for the coarse Lorenz grid at mu = 27
LORENZ_PUBLISHED_P = np.array(
    [
        [0.1008469737786, -0.01415360101927, 0.0],
        [-0.01415360101927, 0.3361537095909, 0.0],
        [0.0, 0.0, 0.3139832543019],
    ]
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: dict = field(default_factory=lambda: {"name": "lorenz", "params": LorenzParams().to_dict()})
    box: dict = None  # None: Lorenz dissipation box
    grid: list = field(default_factory=lambda: [12, 6, 10])
    grid_offsets: list = None
    grid_star: list = field(default_factory=lambda: [12, 6, 10])
    grid_star_offsets: list = None
    eps0: float = 0.1
    mu_max: float = 40.0
    mu_tol: float = 0.25
    c_cap: float = None
    metric: object = "solve"  # "solve" | "published" | explicit matrix
    m_tilde: object = "auto"  # "auto" | positive int
    err_bound: str = "conservative"  # or a path to a JSON list, one value per simplex of T*
    solver: str = "in-process"  # or "export"
    lp_method: str = "highs-ipm"
    lp_time_limit: float = None
    samples: int = 10_000
    verify_tol: float = 1e-6
    seed: int = 0
    out: str = "certificate.json"
    export_dir: str = "export"
    table_grids: list = field(default_factory=lambda: [[30, 14, 28], [42, 14, 28]])
    table_offsets: list = field(default_factory=lambda: [0, 0, 1])
    table_metric: object = "published"

    def validate(self) -> "RunConfig":
        n = self.model_obj().n
        for name in ("grid", "grid_star"):
            g = getattr(self, name)
            if len(g) != n or any(int(c) < 1 for c in g):
                raise ConfigError(f"{name} must have {n} positive entries, got {g}")
        if not self.eps0 > 0:
            raise ConfigError("eps0 must be positive")
        if not self.mu_max > 0 or not self.mu_tol > 0:
            raise ConfigError("mu_max and mu_tol must be positive")
        if self.m_tilde != "auto" and (not isinstance(self.m_tilde, int) or self.m_tilde < 1):
            raise ConfigError("m_tilde must be 'auto' or a positive integer")
        if self.solver not in ("in-process", "export"):
            raise ConfigError("solver must be 'in-process' or 'export'")
        if self.samples < 0:
            raise ConfigError("samples must be >= 0")
        if isinstance(self.metric, str) and self.metric not in ("solve", "published"):
            raise ConfigError("metric must be 'solve', 'published' or a matrix")
        self.box_obj()
        return self

    def validate_table(self) -> "RunConfig":
        n = self.model_obj().n
        for g in self.table_grids:
            if len(g) != n or any(int(c) < 1 for c in g):
                raise ConfigError(f"table grid {g} invalid")
        if len(self.table_offsets) != n:
            raise ConfigError("table_offsets needs one entry per axis")
        return self

    def model_obj(self):
        try:
            return model_from_spec(self.model)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad model section: {exc}") from exc

    def box_obj(self) -> Box:
        if self.box is not None:
            try:
                return Box(tuple(self.box["lo"]), tuple(self.box["hi"]))
            except (KeyError, ValueError, TypeError) as exc:
                raise ConfigError(f"bad box: {exc}") from exc
        if self.model.get("name") != "lorenz":
            raise ConfigError("a box is required for models other than lorenz")
        p = self.model.get("params", {})
        return lorenz_dissipation_box(
            LorenzParams(p.get("sigma", 10.0), p.get("r", 28.0), p.get("b", 8.0 / 3.0), tuple(p.get("scale", (24.5, 100, 100))))
        )

    def metric_matrix(self, which=None):
        which = self.metric if which is None else which
        if isinstance(which, str):
            if which == "published":
                if self.model.get("name") != "lorenz":
                    raise ConfigError("the published metric exists only for the Lorenz model")
                return LORENZ_PUBLISHED_P.copy()
            return None
        P = np.asarray(which, dtype=float)
        n = self.model_obj().n
        if P.shape != (n, n):
            raise ConfigError(f"metric matrix must be {n}x{n}")
        return P

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except OSError as exc:
            raise IOError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(d)
