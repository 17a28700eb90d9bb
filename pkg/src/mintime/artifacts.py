"""CSV/JSON artifact IO: deterministic formatting, stable key order, LF endings."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, obj):
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _fmt(x):
    return repr(float(x))


def write_value_field_csv(path, vf):
    """Rows in lexicographic node order: x1..xn, T, reachable."""
    n = vf.grid.dim
    coords = vf.grid.node_coords()
    tvals = vf.t_values.ravel()
    reach = vf.reachable.ravel()
    header = ",".join([f"x{i + 1}" for i in range(n)] + ["T", "reachable"])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row, t, r in zip(coords, tvals, reach):
            fh.write(",".join([_fmt(c) for c in row] + [_fmt(t), str(int(r))]) + "\n")


def read_value_field_csv(path, grid):
    """Reload T and the reachability mask written by write_value_field_csv."""
    n = grid.dim
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    if data.shape[0] != int(np.prod(grid.shape)) or data.shape[1] != n + 2:
        raise ValueError("value CSV does not match the scenario grid")
    tvals = data[:, n].reshape(grid.shape)
    reach = data[:, n + 1].astype(bool).reshape(grid.shape)
    return tvals, reach


def write_arc_csv(path, arc):
    n = arc.x_path.shape[-1]
    header = ",".join(["t"] + [f"x{i + 1}" for i in range(n)]
                      + [f"p{i + 1}" for i in range(n)] + ["H"])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for t, x, p, h in zip(arc.times, arc.x_path, arc.p_path, arc.h_trace):
            cells = [_fmt(t)] + [_fmt(c) for c in x] + [_fmt(c) for c in p] + [_fmt(h)]
            fh.write(",".join(cells) + "\n")


def read_arc_csv(path, n):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 2 * n + 2:
        raise ValueError(f"arc CSV has {data.shape[1]} columns, expected {2 * n + 2}")
    return {
        "times": data[:, 0],
        "x_path": data[:, 1:1 + n],
        "p_path": data[:, 1 + n:1 + 2 * n],
        "h_trace": data[:, 1 + 2 * n],
    }


def read_trajectory_csv(path, n):
    """Trajectory CSV with columns t, x1..xn and optionally p1..pn."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
    cols = [c.strip() for c in header.split(",")]
    want_x = [f"x{i + 1}" for i in range(n)]
    want_p = [f"p{i + 1}" for i in range(n)]
    if cols[:1] != ["t"] or cols[1:1 + n] != want_x:
        raise ValueError(f"trajectory CSV must start with columns t,{','.join(want_x)}")
    has_p = cols[1 + n:1 + 2 * n] == want_p
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] < 1 + n or (has_p and data.shape[1] < 1 + 2 * n):
        raise ValueError("trajectory CSV rows shorter than the header")
    times = data[:, 0]
    xs = data[:, 1:1 + n]
    ps = data[:, 1 + n:1 + 2 * n] if has_p else None
    return times, xs, ps


def manifest_outputs(out_dir, names):
    out_dir = Path(out_dir)
    entries = []
    for name in sorted(names):
        entries.append({"path": name, "sha256": sha256_file(out_dir / name)})
    return entries
