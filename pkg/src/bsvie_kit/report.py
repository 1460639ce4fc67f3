"""JSON reports and CSV field dumps with fixed column orders.

CSV layouts:

* ensemble: ``path, node, time, x0, x1, ...``
* family:   ``s_node, t_node, path, c0, c1, ...``
* trace:    ``iteration, diff, ratio, diff_<k>..., norm_<k>...`` for the
  components ``y, z, u, v, du, dv``
* policy:   ``node, path, action``

Floats are written with 17 significant digits so identical runs give
byte-identical files.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .paths import PathEnsemble, TimeGrid

COMPONENTS = ("y", "z", "u", "v", "du", "dv")


def fmt(x) -> str:
    return format(float(x), ".17g")


def to_jsonable(obj):
    """Recursively convert dataclasses, numpy values and non-finite floats."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(payload), indent=2, sort_keys=False) + "\n")
    return path


def _writer(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def dump_ensemble(path: str | Path, ensemble: PathEnsemble) -> Path:
    path = Path(path)
    X = ensemble.X
    times = ensemble.grid.times
    fh, w = _writer(path)
    with fh:
        w.writerow(["path", "node", "time"] + [f"x{k}" for k in range(X.shape[2])])
        for p in range(X.shape[0]):
            for i in range(X.shape[1]):
                w.writerow([p, i, fmt(times[i])] + [fmt(v) for v in X[p, i]])
    return path


def dump_family(path: str | Path, U: np.ndarray) -> Path:
    """``U`` shaped ``(nodes, P, S, d)``; rows sorted by parameter node, time node, path."""
    path = Path(path)
    nodes, P, S, d = U.shape
    fh, w = _writer(path)
    with fh:
        w.writerow(["s_node", "t_node", "path"] + [f"c{k}" for k in range(d)])
        for k in range(S):
            for i in range(nodes):
                for p in range(P):
                    w.writerow([k, i, p] + [fmt(v) for v in U[i, p, k]])
    return path


def dump_trace(path: str | Path, trace: list) -> Path:
    path = Path(path)
    fh, w = _writer(path)
    with fh:
        w.writerow(["iteration", "diff", "ratio"] + [f"diff_{c}" for c in COMPONENTS] + [f"norm_{c}" for c in COMPONENTS])
        for row in trace:
            w.writerow(
                [row.iteration, fmt(row.diff), fmt(row.ratio)]
                + [fmt(row.diff_components[c]) for c in COMPONENTS]
                + [fmt(row.norms[c]) for c in COMPONENTS]
            )
    return path


def dump_policy(path: str | Path, policy: np.ndarray) -> Path:
    """``policy`` shaped ``(N, P)``."""
    path = Path(path)
    fh, w = _writer(path)
    with fh:
        w.writerow(["node", "path", "action"])
        for i in range(policy.shape[0]):
            for p in range(policy.shape[1]):
                w.writerow([i, p, fmt(policy[i, p])])
    return path


def trace_rows(trace: list) -> list:
    return [
        {"iteration": r.iteration, "diff": r.diff, "ratio": r.ratio, "diff_components": r.diff_components, "norms": r.norms}
        for r in trace
    ]


def node_diagnostics(Y: np.ndarray, Z: np.ndarray, grid: TimeGrid) -> list:
    """Per-node maxima of ``|Y|`` and ``|sigma^T Z|``."""
    out = []
    for i in range(grid.steps + 1):
        row = {"node": i, "time": float(grid.times[i]), "max_abs_y": float(np.max(np.abs(Y[i])))}
        row["max_abs_z"] = float(np.max(np.linalg.norm(Z[i].reshape(Z.shape[1], -1), axis=1))) if i < grid.steps else None
        out.append(row)
    return out
