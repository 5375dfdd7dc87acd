"""Deterministic on-disk formats: value/policy tables, path tables, and
plain-text summary records.

Every float is printed with 17 significant digits so a read-back is
bit-exact; rows follow row-major node order so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import io
from typing import Optional

import numpy as np

from .solver import Grid, ValueField

__all__ = [
    "format_float",
    "write_value_csv",
    "read_value_csv",
    "write_paths_csv",
    "render_record",
    "write_record",
]


def format_float(v: float) -> str:
    return f"{float(v):.17g}"


def write_value_csv(path, field: ValueField, policy_values: Optional[np.ndarray] = None):
    """Value table, one row per node in row-major order:
    x1,...,xn,value[,policy_u1,...,policy_um]. Policy columns hold control
    values, not lattice indices."""
    grid = field.grid
    coords = grid.node_coords()
    m = 0
    if policy_values is not None:
        policy_values = np.asarray(policy_values, dtype=float)
        if policy_values.ndim != 2 or policy_values.shape[0] != grid.n_nodes:
            raise ValueError("policy table must have one row per node")
        m = policy_values.shape[1]
    header = [f"x{k + 1}" for k in range(grid.n)] + ["value"]
    header += [f"policy_u{j + 1}" for j in range(m)]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in range(grid.n_nodes):
        cells = [format_float(c) for c in coords[r]]
        cells.append(format_float(field.values[r]))
        if m:
            cells.extend(format_float(c) for c in policy_values[r])
        buf.write(",".join(cells) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def read_value_csv(path) -> tuple:
    """Read a value table back into (ValueField, policy_values or None).

    The grid is reconstructed from the coordinate columns (with the default
    interior margin); rows must cover a full lattice in row-major order.
    """
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    n = sum(1 for c in header if c.startswith("x") and not c.startswith("policy"))
    if header[n] != "value":
        raise ValueError("malformed value table header")
    m = len(header) - n - 1
    axes = [np.unique(data[:, k]) for k in range(n)]
    counts = tuple(len(a) for a in axes)
    expected = 1
    for c in counts:
        expected *= c
    if data.shape[0] != expected:
        raise ValueError("value table rows do not cover a full lattice")
    grid = Grid(
        lowers=tuple(float(a[0]) for a in axes),
        uppers=tuple(float(a[-1]) for a in axes),
        counts=counts,
    )
    want = grid.node_coords()
    if not np.array_equal(want, data[:, :n]):
        raise ValueError("value table rows are not in row-major node order")
    field = ValueField(grid=grid, values=data[:, n])
    policy = data[:, n + 1:] if m else None
    return field, policy


def write_paths_csv(path, bundle, max_paths: Optional[int] = None):
    """Path table: path,step,t,x1..xn,q11..qdd with one row per recorded time
    point. The q columns hold the quadratic-variation increment committed over
    [t, t+dt]; the final row of a path repeats the last increment."""
    P, K1, n = bundle.states.shape
    K = K1 - 1
    d = bundle.qv.shape[2]
    count = P if max_paths is None else min(P, int(max_paths))
    header = ["path", "step", "t"]
    header += [f"x{k + 1}" for k in range(n)]
    header += [f"q{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for p in range(count):
        for k in range(K + 1):
            cells = [str(p), str(k), format_float(k * bundle.dt)]
            cells.extend(format_float(c) for c in bundle.states[p, k])
            q = bundle.qv[p, min(k, K - 1)]
            cells.extend(format_float(q[i, j]) for i in range(d) for j in range(d))
            buf.write(",".join(cells) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def render_record(obj, indent: int = 0) -> str:
    """JSON text with floats at 17 significant digits and keys in insertion
    order, so identical records render byte-identically."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        inner = ",\n".join(
            f'{pad}  "{k}": {render_record(v, indent + 1)}' for k, v in obj.items()
        )
        return "{\n" + inner + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            return "[]"
        return "[" + ", ".join(render_record(v, indent) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return {True: "true", False: "false", None: "null"}[bool(obj)] if obj is not None else "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if v != v:
            return '"nan"'
        if v in (float("inf"), float("-inf")):
            return f'"{v}"'
        return format_float(v)
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(obj, np.ndarray):
        return render_record(obj.tolist(), indent)
    raise TypeError(f"cannot render {type(obj).__name__} in a summary record")


def write_record(path, record: dict):
    with open(path, "w") as fh:
        fh.write(render_record(record) + "\n")
