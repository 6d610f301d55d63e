"""Fixed-layout MPS writer/reader for the Lyapunov LP and solution import.

Names are at most 8 characters: a one-letter prefix plus a base-36 index
(``V`` vertex values, ``A`` gradient auxiliaries, ``Q``; rows ``R``).  Name
fields sit in the fixed columns; numbers are written with 17 significant
digits, which can overflow the 12-character field, so strict column-based
readers should be switched to free format.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .lyapopt import LpProblem

_DIGITS = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"


def base36(i: int) -> str:
    if i == 0:
        return "0"
    out = []
    while i:
        i, r = divmod(i, 36)
        out.append(_DIGITS[r])
    return "".join(reversed(out))


def column_names(prob: LpProblem) -> list:
    nv, q = prob.num_vertices, prob.q_index
    names = ["V" + base36(j) for j in range(nv)] + ["A" + base36(j) for j in range(q - nv)] + ["Q"]
    if max(len(s) for s in names) > 8:
        raise ValueError("problem too large for 8-character MPS names")
    return names


def row_names(count: int) -> list:
    return ["R" + base36(i) for i in range(count)]


def write_mps(prob: LpProblem, destination, name: str = "CPALYAP") -> None:
    cols = column_names(prob)
    rows = row_names(prob.num_constraints)
    A = prob.A_ub.tocsc()
    lines = [f"NAME          {name[:8]}", "ROWS", " N  OBJ"]
    lines += [f" L  {r}" for r in rows]
    lines.append("COLUMNS")
    for j, cname in enumerate(cols):
        start, end = A.indptr[j], A.indptr[j + 1]
        entries = [(rows[i], v) for i, v in zip(A.indices[start:end], A.data[start:end])]
        if prob.c[j] != 0.0:
            entries.insert(0, ("OBJ", prob.c[j]))
        for rname, v in entries:
            lines.append(f"    {cname:<8}  {rname:<8}  {v:.17g}")
    lines.append("RHS")
    for i in np.flatnonzero(prob.b_ub):
        lines.append(f"    {'RHS':<8}  {rows[i]:<8}  {prob.b_ub[i]:.17g}")
    lines.append("BOUNDS")
    for j, cname in enumerate(cols):
        lo, hi = prob.lo[j], prob.hi[j]
        if lo == hi:
            lines.append(f" FX {'BND':<8}  {cname:<8}  {lo:.17g}")
        elif np.isinf(lo) and np.isinf(hi):
            lines.append(f" FR {'BND':<8}  {cname:<8}")
        else:
            if lo != 0.0:
                lines.append(f" {'LO' if np.isfinite(lo) else 'MI'} {'BND':<8}  {cname:<8}" + (f"  {lo:.17g}" if np.isfinite(lo) else ""))
            if np.isfinite(hi):
                lines.append(f" UP {'BND':<8}  {cname:<8}  {hi:.17g}")
    lines.append("ENDATA")
    try:
        Path(destination).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IOError(f"cannot write {destination}: {exc}") from exc


def read_mps(source):
    """Parse a file written by :func:`write_mps` (or any free-format MPS with L rows).

    Returns (c, A_ub csr, b_ub, lo, hi, column names, row names).
    """
    try:
        text = Path(source).read_text().splitlines()
    except OSError as exc:
        raise IOError(f"cannot read {source}: {exc}") from exc
    section = None
    obj = None
    rows, cols = {}, {}
    entries, rhs, bounds = [], {}, []
    for line in text:
        if not line.strip() or line.startswith("*"):
            continue
        if not line.startswith(" "):
            section = line.split()[0]
            continue
        tok = line.split()
        if section == "ROWS":
            if tok[0] == "N":
                obj = tok[1]
            elif tok[0] == "L":
                rows[tok[1]] = len(rows)
            else:
                raise ValueError(f"unsupported row type {tok[0]}")
        elif section == "COLUMNS":
            cname = tok[0]
            if cname not in cols:
                cols[cname] = len(cols)
            for k in range(1, len(tok), 2):
                entries.append((cname, tok[k], float(tok[k + 1])))
        elif section == "RHS":
            for k in range(1, len(tok), 2):
                rhs[tok[k]] = float(tok[k + 1])
        elif section == "BOUNDS":
            bounds.append(tok)
    m, n = len(rows), len(cols)
    c = np.zeros(n)
    r, cc, v = [], [], []
    for cname, rname, val in entries:
        if rname == obj:
            c[cols[cname]] = val
        else:
            r.append(rows[rname])
            cc.append(cols[cname])
            v.append(val)
    A = sp.csr_matrix((v, (r, cc)), shape=(m, n))
    b = np.zeros(m)
    for rname, val in rhs.items():
        b[rows[rname]] = val
    lo, hi = np.zeros(n), np.full(n, np.inf)
    for tok in bounds:
        kind, j = tok[0], cols[tok[2]]
        val = float(tok[3]) if len(tok) > 3 else None
        if kind == "FX":
            lo[j] = hi[j] = val
        elif kind == "FR":
            lo[j], hi[j] = -np.inf, np.inf
        elif kind == "MI":
            lo[j] = -np.inf
        elif kind == "LO":
            lo[j] = val
        elif kind == "UP":
            hi[j] = val
    names_c = sorted(cols, key=cols.get)
    names_r = sorted(rows, key=rows.get)
    return c, A, b, lo, hi, names_c, names_r


def read_solution(source, prob: LpProblem) -> np.ndarray:
    """Whitespace-separated ``name value`` pairs -> full variable vector."""
    index = {name: j for j, name in enumerate(column_names(prob))}
    x = np.full(prob.num_vars, np.nan)
    try:
        tokens = Path(source).read_text().split()
    except OSError as exc:
        raise IOError(f"cannot read {source}: {exc}") from exc
    if len(tokens) % 2:
        raise ValueError("solution file must hold name/value pairs")
    for name, val in zip(tokens[::2], tokens[1::2]):
        if name in index:
            x[index[name]] = float(val)
    missing = int(np.isnan(x).sum())
    if missing:
        raise ValueError(f"{missing} variables missing from the solution file")
    return x


def write_solution(destination, prob: LpProblem, x) -> None:
    names = column_names(prob)
    Path(destination).write_text("".join(f"{nm} {v:.17g}\n" for nm, v in zip(names, np.asarray(x, dtype=float))))
