"""Sparse SDPA (.dat-s) writer and reader for block LMI problems.

Blocks of size >= 2 become matrix blocks in group order; all 1x1 rows are
collected into one trailing diagonal block (negative size in the block
structure line).  A problem made only of 1x1 rows keeps them as separate
1x1 blocks.  Indices are 1-based, entries upper triangle only, and
constraint matrix 0 holds F_0 so that sum_i F_i y_i - F_0 >= 0.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lmi import LmiProblem


def _layout(prob: LmiProblem):
    """Block number and in-block offset for every (group, block)."""
    only_scalars = all(g.size == 1 for g in prob.groups)
    sizes = []
    placement = []  # per group: (block numbers (nb,), offsets (nb,))
    diag_rows = 0
    for g in prob.groups:
        nb = len(g)
        if g.size > 1 or only_scalars:
            start = len(sizes) + 1
            sizes.extend([g.size] * nb)
            placement.append((np.arange(start, start + nb), np.zeros(nb, dtype=int)))
        else:
            placement.append((None, diag_rows + np.arange(nb)))
            diag_rows += nb
    if diag_rows:
        diag_block = len(sizes) + 1
        sizes.append(-diag_rows)
        placement = [(np.full(len(off), diag_block) if blk is None else blk, off) for blk, off in placement]
    return sizes, placement


def _entries(prob: LmiProblem):
    """All nonzero (mat, block, i, j, value) tuples, 1-based."""
    sizes, placement = _layout(prob)
    out = []
    for g, (blk, off) in zip(prob.groups, placement):
        nb, t = g.var_idx.shape
        d = g.size
        iu, ju = np.triu_indices(d)
        # accumulate duplicated variables inside one block
        mats = np.concatenate([np.zeros((nb, 1), dtype=int), g.var_idx + 1], axis=1)  # (nb, t+1)
        vals = np.concatenate([g.const[:, None], g.coef], axis=1)[:, :, iu, ju]  # (nb, t+1, u)
        b_ = np.broadcast_to(blk[:, None, None], vals.shape)
        m_ = np.broadcast_to(mats[:, :, None], vals.shape)
        i_ = np.broadcast_to(off[:, None, None] + iu + 1, vals.shape)
        j_ = np.broadcast_to(off[:, None, None] + ju + 1, vals.shape)
        rec = np.column_stack([m_.ravel(), b_.ravel(), i_.ravel(), j_.ravel()])
        v = vals.ravel()
        keep = v != 0.0
        out.append((rec[keep], v[keep]))
    rec = np.concatenate([r for r, _ in out]) if out else np.zeros((0, 4), dtype=int)
    val = np.concatenate([v for _, v in out]) if out else np.zeros(0)
    # merge repeated keys (same variable listed twice in a block)
    uniq, inv = np.unique(rec, axis=0, return_inverse=True)
    inv = inv.ravel()
    acc = np.zeros(len(uniq))
    np.add.at(acc, inv, val)
    keep = acc != 0.0
    return sizes, uniq[keep], acc[keep]


def write_sdpa(prob: LmiProblem, destination, header: dict = None) -> dict:
    """Write the problem; returns a small summary (counts) for manifests."""
    sizes, rec, val = _entries(prob)
    buf = io.StringIO()
    meta = dict(header or {})
    for line in json.dumps(meta, sort_keys=True, indent=1).splitlines():
        buf.write(f"* {line}\n")
    buf.write(f"{prob.num_vars}\n{len(sizes)}\n")
    buf.write(" ".join(str(s) for s in sizes) + "\n")
    buf.write(" ".join(f"{c:.17g}" for c in prob.objective) + "\n")
    if len(rec):
        np.savetxt(buf, np.column_stack([rec, val]), fmt=["%d", "%d", "%d", "%d", "%.17g"])
    text = buf.getvalue()
    try:
        Path(destination).write_text(text)
    except OSError as exc:
        raise IOError(f"cannot write {destination}: {exc}") from exc
    return {"num_vars": prob.num_vars, "num_blocks": len(sizes), "block_sizes_distinct": sorted(set(sizes)),
            "num_entries": int(len(rec))}


@dataclass
class SdpaData:
    m: int
    block_sizes: list
    c: np.ndarray
    entries: np.ndarray  # (E, 4) int: mat, block, i, j (1-based)
    values: np.ndarray
    comments: list

    def evaluate(self, y) -> list:
        """sum_i F_i y_i - F_0 per block: dense matrices, or a vector for diagonal blocks."""
        y = np.asarray(y, dtype=float)
        blocks = [np.zeros((s, s)) if s > 0 else np.zeros(-s) for s in self.block_sizes]
        w = np.where(self.entries[:, 0] == 0, -1.0, y[np.maximum(self.entries[:, 0] - 1, 0)])
        for (mat, b, i, j), v, wt in zip(self.entries, self.values, w):
            blk = blocks[b - 1]
            if blk.ndim == 1:
                blk[i - 1] += wt * v
            else:
                blk[i - 1, j - 1] += wt * v
                if i != j:
                    blk[j - 1, i - 1] += wt * v
        return blocks


def read_sdpa(source) -> SdpaData:
    try:
        lines = Path(source).read_text().splitlines()
    except OSError as exc:
        raise IOError(f"cannot read {source}: {exc}") from exc
    comments = [ln[1:].strip() for ln in lines if ln.startswith(("*", '"'))]
    body = [ln for ln in lines if ln.strip() and not ln.startswith(("*", '"'))]

    def nums(line):
        for ch in "{}(),":
            line = line.replace(ch, " ")
        return line.split()

    m = int(nums(body[0])[0])
    nblocks = int(nums(body[1])[0])
    sizes = [int(s) for s in nums(body[2])][:nblocks]
    c = np.array([float(v) for v in nums(body[3])][:m])
    rows = [nums(ln) for ln in body[4:]]
    ent = np.array([[int(r[0]), int(r[1]), int(r[2]), int(r[3])] for r in rows], dtype=int).reshape(-1, 4)
    val = np.array([float(r[4]) for r in rows])
    return SdpaData(m, sizes, c, ent, val, comments)


def problem_blocks(prob: LmiProblem, y) -> list:
    """Evaluate a problem in the same block layout as the file."""
    sizes, placement = _layout(prob)
    blocks = [np.zeros((s, s)) if s > 0 else np.zeros(-s) for s in sizes]
    for g, (blk, off) in zip(prob.groups, placement):
        F = g.evaluate(y)
        for b in range(len(g)):
            target = blocks[blk[b] - 1]
            if target.ndim == 1:
                target[off[b]] = F[b, 0, 0]
            else:
                target[:] = F[b]
    return blocks
