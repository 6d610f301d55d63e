"""Command line front end: certify, table1, verify, export, analytic-bound, empirical."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .cpa import CpaMatrixField
from .entropy import (
    analytic_lorenz_bound,
    attractor_samples,
    bound_from_Q,
    const_p_bound,
    empirical_entropy_estimate,
)
from .geometry import GridSpec, build_box_triangulation
from .lyapopt import (
    EntropyCertificate,
    LpSolveError,
    NotRefinementError,
    assemble_lp,
    assemble_op2_full_sdp,
    conservative_err_bound,
    estimate_m_tilde,
    simplex_gradients,
    solve_lp,
    verify_certificate,
    vertex_mu_simplified,
)
from .metricopt import (
    MetricInfeasibleError,
    assemble_op1_const,
    assemble_op1_full,
    bisect_mu,
    verify_const_metric,
    vertex_lambda_max,
)
from .mps import column_names, read_solution, write_mps
from .sdpa import write_sdpa
from .sysmodel import model_to_spec

log = logging.getLogger("cpaentropy")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4
EXIT_VERIFY = 5
EXIT_IO = 6

CSV_HEADER = ["N_x", "N_y", "N_z", "time_s", "improved", "Q", "upper_bound"]


class VerificationFailed(RuntimeError):
    def __init__(self, report):
        super().__init__("; ".join(report.messages) or "verification failed")
        self.report = report


@dataclass
class ResultRow:
    grid: tuple
    time_s: float
    improved: bool
    Q: float
    upper_bound: float

    def cells(self) -> list:
        q = "" if self.Q is None else f"{self.Q:.6f}"
        ub = "" if self.upper_bound is None else f"{self.upper_bound:.6f}"
        return [*self.grid, f"{self.time_s:.1f}", "Yes" if self.improved else "No", q, ub]


def _grid(counts, offsets=None) -> GridSpec:
    return GridSpec(tuple(counts), None if offsets is None else tuple(offsets))


def _metric_stage(cfg: RunConfig, model, T, which=None):
    """Constant metric on T: solved by bisection or taken from the config."""
    t0 = time.perf_counter()
    P = cfg.metric_matrix(which)
    if P is None:
        res = bisect_mu(T, model, cfg.eps0, cfg.mu_max, cfg.mu_tol, cfg.c_cap)
        P, mu = res.P, res.mu_star
        source = "solved"
    else:
        mu = float(vertex_lambda_max(T, model, P).max())
        source = "given"
    check = verify_const_metric(T, model, P, mu, min(cfg.eps0, float(np.linalg.eigvalsh(P)[0])))
    if not check.ok:
        raise MetricInfeasibleError(f"metric fails its own verification ({check.worst_group} {check.worst_label})")
    return P, mu, {"metric_source": source, "metric_seconds": time.perf_counter() - t0}


def _err_bound(cfg: RunConfig, Tstar, model):
    if cfg.err_bound == "conservative":
        return None
    try:
        vals = np.asarray(json.loads(Path(cfg.err_bound).read_text()), dtype=float)
    except OSError as exc:
        raise IOError(f"cannot read err_bound file: {exc}") from exc
    if vals.shape != (Tstar.num_simplices,):
        raise ConfigError("err_bound file needs one value per simplex of the LP grid")
    return vals


def _m_tilde(cfg: RunConfig, Tstar, model, P):
    if cfg.m_tilde == "auto":
        m, diag = estimate_m_tilde(Tstar, model, P, samples=cfg.samples, seed=cfg.seed)
        return max(1, m), diag
    return int(cfg.m_tilde), {"override": True}


def certified_Q(Tstar, model, V, mu, m_tilde, err=None) -> float:
    """Q implied by V and the mu table: the largest vertex-row left-hand side."""
    err = conservative_err_bound(Tstar, model) if err is None else err
    grads = simplex_gradients(Tstar, V)
    fx = model.f(Tstar.vertices)[Tstar.simplices]
    lhs = np.einsum("sn,skn->sk", grads, fx) + (err * np.abs(grads).sum(axis=1))[:, None] + m_tilde * mu[Tstar.simplices]
    return float(lhs.max())


def cmd_certify(cfg: RunConfig):
    """Metric on T, mu table on T*, LP for V, then independent verification."""
    cfg.validate()
    t_start = time.perf_counter()
    model = cfg.model_obj()
    box = cfg.box_obj()
    T = build_box_triangulation(box, _grid(cfg.grid, cfg.grid_offsets))
    P, mu, meta = _metric_stage(cfg, model, T)
    const_report = const_p_bound(T, model, P, 1)

    Tstar = build_box_triangulation(box, _grid(cfg.grid_star, cfg.grid_star_offsets))
    m_tilde, m_diag = _m_tilde(cfg, Tstar, model, P)
    table = vertex_mu_simplified(Tstar, model, P).clamped()
    err = _err_bound(cfg, Tstar, model)
    lp = assemble_lp(Tstar, model, table, m_tilde, err)
    sol = solve_lp(lp, time_limit=cfg.lp_time_limit, method=cfg.lp_method)
    Q = max(sol.Q, certified_Q(Tstar, model, sol.V, table.values, m_tilde, err))
    elapsed = time.perf_counter() - t_start

    cert = EntropyCertificate(
        model=model_to_spec(model),
        box=box.to_dict(),
        grid_star=Tstar.grid.to_dict(),
        P=P,
        mu_table=table.values,
        V=sol.V,
        m_tilde=m_tilde,
        Q=Q,
        eps0=cfg.eps0,
        mu=mu,
        err_mode="conservative" if err is None else "user",
        err_bound=err,
        grid_metric=T.grid.to_dict(),
        tolerances={"rel": cfg.verify_tol, "metric_margin": 1e-8},
        solver={
            "lp": cfg.lp_method,
            "lp_Q": sol.Q,
            "lp_vars": lp.num_vars,
            "lp_rows": lp.num_constraints,
            "m_tilde_diagnostic": m_diag,
            "const_metric_bound": const_report.bound,
            "metric_source": meta["metric_source"],
        },
    )
    report = verify_certificate(cert, model, samples=cfg.samples, tol=cfg.verify_tol, seed=cfg.seed)
    if not report.ok:
        raise VerificationFailed(report)
    row = ResultRow(tuple(cfg.grid_star), elapsed, False, Q, bound_from_Q(max(0.0, Q)))
    return cert, row, report


def _write_csv(rows, out) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.cells())
    text = buf.getvalue()
    if out:
        Path(out).write_text(text)
    return text


def cmd_table1(cfg: RunConfig, solution_dir=None):
    """One row per LP grid, smallest first; export mode writes MPS files instead of solving."""
    cfg.validate().validate_table()
    model = cfg.model_obj()
    box = cfg.box_obj()
    T = build_box_triangulation(box, _grid(cfg.grid, cfg.grid_offsets))
    P, _, _ = _metric_stage(cfg, model, T, cfg.table_metric)
    rows = []
    for counts in sorted(cfg.table_grids, key=lambda g: int(np.prod(g))):
        t0 = time.perf_counter()
        Tstar = build_box_triangulation(box, _grid(counts, cfg.table_offsets))
        m_tilde = cfg.m_tilde if cfg.m_tilde != "auto" else max(1, estimate_m_tilde(Tstar, model, P, samples=cfg.samples)[0])
        table = vertex_mu_simplified(Tstar, model, P).clamped()
        lp = assemble_lp(Tstar, model, table, m_tilde, _err_bound(cfg, Tstar, model))
        tag = "x".join(str(c) for c in counts)
        Q = None
        if cfg.solver == "in-process":
            sol = solve_lp(lp, time_limit=cfg.lp_time_limit, method=cfg.lp_method)
            Q = max(sol.Q, certified_Q(Tstar, model, sol.V, table.values, m_tilde, lp.err_bound))
        else:
            d = Path(cfg.export_dir)
            d.mkdir(parents=True, exist_ok=True)
            write_mps(lp, d / f"lp_{tag}.mps")
            sol_file = None if solution_dir is None else Path(solution_dir) / f"lp_{tag}.sol"
            if sol_file is not None and sol_file.exists():
                x = read_solution(sol_file, lp)
                V = lp.split(x)[0]
                Q = certified_Q(Tstar, model, V, table.values, m_tilde, lp.err_bound)
        ub = None if Q is None else bound_from_Q(max(0.0, Q))
        rows.append(ResultRow(tuple(counts), time.perf_counter() - t0, False, Q, ub))
        log.info("grid %s: vars=%d rows=%d Q=%s", tag, lp.num_vars, lp.num_constraints, Q)
    return rows


def cmd_verify(path, samples: int = 10_000, tol: float = None):
    cert = EntropyCertificate.load(path)
    report = verify_certificate(cert, samples=samples, tol=tol)
    return (EXIT_OK if report.ok else EXIT_VERIFY), report


def cmd_export(cfg: RunConfig, kind: str, path=None) -> dict:
    """Write SDPA / MPS files and a manifest; returns the manifest."""
    cfg.validate()
    model = cfg.model_obj()
    box = cfg.box_obj()
    out = Path(path or cfg.export_dir)
    out.mkdir(parents=True, exist_ok=True)
    T = build_box_triangulation(box, _grid(cfg.grid, cfg.grid_offsets))
    manifest = {"kind": kind, "model": model_to_spec(model), "box": box.to_dict(), "grid": T.grid.to_dict()}

    if kind in ("sdp", "sdp-const"):
        mu = cfg.mu_max
        build = assemble_op1_full if kind == "sdp" else assemble_op1_const
        prob = build(T, model, mu, cfg.eps0, cfg.c_cap)
        header = {
            "problem": "metric, full" if kind == "sdp" else "metric, constant",
            "grid": T.grid.to_dict(),
            "box": box.to_dict(),
            "mu": mu,
            "eps0": cfg.eps0,
            "constants_h_B_B3": prob.constants_table().tolist(),
        }
        fname = out / f"{kind}.dat-s"
        summary = write_sdpa(prob, fname, header)
        manifest.update(_catalog(prob.var_names, summary, prob.num_blocks, prob.num_scalar_rows))
        manifest.update({"file": fname.name, "mu": mu, "eps0": cfg.eps0, "constants_h_B_B3": header["constants_h_B_B3"]})
    elif kind == "sdp-op2":
        P, _, _ = _metric_stage(cfg, model, T)
        Tstar = build_box_triangulation(box, _grid(cfg.grid_star, cfg.grid_star_offsets))
        m_tilde, _ = _m_tilde(cfg, Tstar, model, P)
        prob = assemble_op2_full_sdp(T, Tstar, model, CpaMatrixField.constant(T, P), m_tilde)
        header = {"problem": "Lyapunov, monolithic", "grid": T.grid.to_dict(), "grid_star": Tstar.grid.to_dict(),
                  "m_tilde": m_tilde, "box": box.to_dict()}
        fname = out / "sdp-op2.dat-s"
        summary = write_sdpa(prob, fname, header)
        manifest.update(_catalog(prob.var_names, summary, prob.num_blocks, prob.num_scalar_rows))
        manifest.update({"file": fname.name, "grid_star": Tstar.grid.to_dict(), "m_tilde": m_tilde})
    elif kind == "lp":
        P, mu, _ = _metric_stage(cfg, model, T)
        Tstar = build_box_triangulation(box, _grid(cfg.grid_star, cfg.grid_star_offsets))
        m_tilde, _ = _m_tilde(cfg, Tstar, model, P)
        table = vertex_mu_simplified(Tstar, model, P).clamped()
        lp = assemble_lp(Tstar, model, table, m_tilde, _err_bound(cfg, Tstar, model))
        fname = out / "lp.mps"
        write_mps(lp, fname)
        names = column_names(lp)
        manifest.update(
            {
                "file": fname.name,
                "grid_star": Tstar.grid.to_dict(),
                "m_tilde": m_tilde,
                "P": np.asarray(P).tolist(),
                "mu": mu,
                "num_vars": lp.num_vars,
                "num_constraints": lp.num_constraints,
                "catalog": {"V": lp.num_vertices, "A": lp.num_vars - lp.num_vertices - 1, "Q": 1},
                "first_names": names[:3],
            }
        )
    else:
        raise ConfigError(f"unknown export kind {kind!r}")
    (out / f"{kind}.manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return manifest


def _catalog(var_names, summary, num_blocks, num_scalar_rows) -> dict:
    groups = {}
    for name in var_names:
        key = name.split("[")[0].rstrip("0123456789") or name
        groups[key] = groups.get(key, 0) + 1
    return {
        "num_vars": len(var_names),
        "catalog": groups,
        "num_matrix_blocks": num_blocks,
        "num_scalar_rows": num_scalar_rows,
        "sdpa": summary,
    }


# ------------------------------------------------------------------ argparse


def _triple(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpaentropy", description="Certified entropy bounds via CPA metrics and LPs.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--grid", type=_triple, help="metric grid counts, e.g. 12,6,10")
        sp.add_argument("--grid-star", type=_triple, help="LP grid counts")
        sp.add_argument("--mu-max", type=float)
        sp.add_argument("--mu-tol", type=float)
        sp.add_argument("--eps0", type=float)
        sp.add_argument("--samples", type=int)
        sp.add_argument("--export-dir")
        sp.add_argument("--out")
        sp.add_argument("--metric", choices=["solve", "published"])

    c = sub.add_parser("certify", help="run the full pipeline and write a certificate")
    common(c)
    t = sub.add_parser("table1", help="reproduction table as CSV")
    common(t)
    t.add_argument("--export", action="store_true", help="write MPS files instead of solving")
    t.add_argument("--solution", help="directory with lp_<grid>.sol files from an external solver")
    v = sub.add_parser("verify", help="re-check a certificate file")
    v.add_argument("certificate")
    v.add_argument("--samples", type=int, default=10_000)
    v.add_argument("--tol", type=float)
    e = sub.add_parser("export", help="write SDPA/MPS files for external solvers")
    common(e)
    e.add_argument("--kind", choices=["sdp", "sdp-const", "sdp-op2", "lp"], default="lp")
    a = sub.add_parser("analytic-bound", help="closed-form Lorenz estimate")
    a.add_argument("--sigma", type=float, default=10.0)
    a.add_argument("--r", type=float, default=28.0)
    m = sub.add_parser("empirical", help="finite-time singular value estimate on attractor samples")
    common(m)
    m.add_argument("--starts", type=int, default=50)
    m.add_argument("--t", type=float, default=20.0)
    return p


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for attr, key in [
        ("grid", "grid"),
        ("grid_star", "grid_star"),
        ("mu_max", "mu_max"),
        ("mu_tol", "mu_tol"),
        ("eps0", "eps0"),
        ("samples", "samples"),
        ("export_dir", "export_dir"),
        ("out", "out"),
        ("metric", "metric"),
    ]:
        val = getattr(args, attr, None)
        if val is not None:
            setattr(cfg, key, val)
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "analytic-bound":
            print(f"{analytic_lorenz_bound(args.sigma, args.r):.6f}")
            return EXIT_OK
        if args.command == "verify":
            code, report = cmd_verify(args.certificate, args.samples, args.tol)
            print(json.dumps(report.__dict__, indent=1, default=float))
            return code
        cfg = _config_from_args(args)
        if args.command == "certify":
            cert, row, report = cmd_certify(cfg)
            cert.save(cfg.out)
            print(_write_csv([row], None), end="")
            return EXIT_OK
        if args.command == "table1":
            if args.export:
                cfg.solver = "export"
            rows = cmd_table1(cfg, args.solution)
            print(_write_csv(rows, cfg.out if cfg.out != "certificate.json" else None), end="")
            return EXIT_OK
        if args.command == "export":
            manifest = cmd_export(cfg, args.kind, cfg.export_dir)
            print(json.dumps({k: manifest[k] for k in ("file", "num_vars")}, indent=1))
            return EXIT_OK
        if args.command == "empirical":
            cfg.validate()
            model = cfg.model_obj()
            box = cfg.box_obj()
            rng = np.random.default_rng(cfg.seed)
            starts = attractor_samples(model, rng.uniform(box.lo, box.hi, size=(args.starts, model.n)))
            print(f"{empirical_entropy_estimate(model, starts, args.t):.6f}")
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MetricInfeasibleError, NotRefinementError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except LpSolveError as exc:
        print(f"solver: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (IOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
