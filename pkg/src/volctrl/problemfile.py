"""Sectioned plain-text problem files.

One file describes one problem together with the solver and Monte Carlo
settings used on it, so every reported number is reproducible from a single
artifact. Sections and keys:

    [dimensions]  n, d, m
    [dynamics]    b_1..b_n, sigma_ik (state row i, noise column k),
                  optional h_ij_k (noise pair ij, state component k)
    [cost]        f, or psi together with lambda (expanded to
                  f = -lambda*y + psi); optional g_ij
    [uncertainty] sigma_lo2, sigma_hi2, optional candidate_1.. matrices
                  (rows separated by ';')
    [control]     lower, upper, optional points
    [solver]      bounds_1..bounds_n ("lo hi"), counts, optional tol, mu
    [mc]          dt, optional T_cut, T, n_paths, seed, x0

Two-digit index keys like sigma_12 may also be written sigma_1_2; the
underscore form is required when a dimension exceeds 9. Off-diagonal g and h
entries given on one side only are filled in by symmetry; giving both sides
with different expressions is an error. Unknown sections or keys are rejected
with their line number, and every expression is parsed at load time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .expressions import parse_expression
from .problem import (
    ControlSet,
    ProblemSpec,
    UncertaintySet,
    control_var_names,
    cost_var_names,
    spec_from_strings,
    state_var_names,
)

__all__ = [
    "ProblemFileError",
    "SolverSettings",
    "MCSettings",
    "LoadedProblem",
    "load_problem",
]


class ProblemFileError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class SolverSettings:
    bounds: tuple        # ((lo, hi), ...) one pair per state axis
    counts: tuple        # nodes per axis
    tol: float = 1e-3


@dataclass(frozen=True)
class MCSettings:
    dt: float
    T_cut: Optional[float] = None
    T: Optional[float] = None
    n_paths: int = 10_000
    seed: int = 0
    x0: tuple = ()


@dataclass(frozen=True)
class LoadedProblem:
    spec: ProblemSpec
    solver: SolverSettings
    mc: Optional[MCSettings]


_SECTIONS = ("dimensions", "dynamics", "cost", "uncertainty", "control", "solver", "mc")


def _split_indices(key: str, prefix: str, parts: int):
    """Match index spellings like sigma_12, sigma_1_2, or h_12_1 against a
    prefix and an index count. Fully underscored groups are taken whole (the
    only unambiguous spelling past dimension 9); otherwise the digits expand
    one index each. Returns the indices, or None when the key differs."""
    if not key.startswith(prefix + "_"):
        return None
    groups = key[len(prefix) + 1:].split("_")
    if not all(g.isdigit() and g for g in groups):
        return None
    if len(groups) == parts:
        return tuple(int(g) for g in groups)
    digits = [int(c) for g in groups for c in g]
    if len(digits) == parts:
        return tuple(digits)
    return None


def _parse_floats(text: str, what: str, line: int) -> list:
    toks = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    try:
        return [float(t) for t in toks]
    except ValueError:
        raise ProblemFileError(f"{what} must be a list of numbers, got {text!r}", line)


def _parse_matrix(text: str, line: int) -> np.ndarray:
    rows = [r for r in text.split(";") if r.strip()]
    vals = [_parse_floats(r, "matrix row", line) for r in rows]
    if any(len(v) != len(vals) for v in vals):
        raise ProblemFileError(f"matrix {text!r} is not square", line)
    return np.array(vals)


def _scan(path) -> dict:
    """Read the sectioned key=value file into {section: {key: (value, line)}}."""
    sections: dict = {}
    current = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.fullmatch(r"\[(\w+)\]", line)
            if m:
                name = m.group(1)
                if name not in _SECTIONS:
                    raise ProblemFileError(f"unknown section [{name}]", lineno)
                if name in sections:
                    raise ProblemFileError(f"duplicate section [{name}]", lineno)
                sections[name] = {}
                current = name
                continue
            if "=" not in line:
                raise ProblemFileError(f"expected key=value, got {line!r}", lineno)
            if current is None:
                raise ProblemFileError("key before any [section] header", lineno)
            key, value = line.split("=", 1)
            key, value = key.strip(), value.strip()
            if key in sections[current]:
                raise ProblemFileError(f"duplicate key {key!r} in [{current}]", lineno)
            sections[current][key] = (value, lineno)
    return sections


def _take(sec: dict, key: str):
    return sec.pop(key, (None, None))


def _require(sec: dict, key: str, section: str):
    val, line = _take(sec, key)
    if val is None:
        raise ProblemFileError(f"[{section}] is missing the key {key!r}")
    return val, line


def _int_of(pair, what: str) -> int:
    text, line = pair
    try:
        return int(text)
    except (TypeError, ValueError):
        raise ProblemFileError(f"{what} must be an integer, got {text!r}", line)


def _float_of(pair, what: str) -> float:
    text, line = pair
    try:
        return float(text)
    except (TypeError, ValueError):
        raise ProblemFileError(f"{what} must be a number, got {text!r}", line)


def _check_expr(text: str, names, line: int):
    try:
        parse_expression(text, names)
    except Exception as e:
        raise ProblemFileError(f"bad expression {text!r}: {e}", line)


def _reject_leftovers(sections: dict):
    for name, sec in sections.items():
        for key, (_v, line) in sec.items():
            raise ProblemFileError(f"unknown key {key!r} in [{name}]", line)


def _indexed_table(sec: dict, prefix: str, parts: int) -> dict:
    out = {}
    for key in list(sec):
        idx = _split_indices(key, prefix, parts)
        if idx is not None:
            out[idx] = sec.pop(key)
    return out


def _symmetric_fill(table: dict, what: str):
    """Mirror (i,j)->(j,i) entries; both sides present with different
    expressions is a contradiction."""
    for idx in list(table):
        mirror = (idx[1], idx[0]) + idx[2:]
        if mirror == idx:
            continue
        if mirror in table:
            if table[mirror][0] != table[idx][0]:
                raise ProblemFileError(
                    f"{what} entries {idx} and {mirror} disagree; "
                    "off-diagonal entries must match by symmetry",
                    table[mirror][1],
                )
        else:
            table[mirror] = table[idx]


def _parse_file(path) -> LoadedProblem:
    sections = _scan(path)
    for required in ("dimensions", "dynamics", "cost", "uncertainty", "control", "solver"):
        if required not in sections:
            raise ProblemFileError(f"missing required section [{required}]")

    dims = sections["dimensions"]
    n = _int_of(_require(dims, "n", "dimensions"), "n")
    d = _int_of(_require(dims, "d", "dimensions"), "d")
    m = _int_of(_require(dims, "m", "dimensions"), "m")
    if min(n, d, m) < 1:
        raise ProblemFileError("dimensions n, d, m must be positive")

    dyn_names = state_var_names(n) + control_var_names(m)
    cost_names = cost_var_names(n, d, m)

    dyn = sections["dynamics"]
    b = []
    for i in range(1, n + 1):
        val, line = _require(dyn, f"b_{i}", "dynamics")
        _check_expr(val, dyn_names, line)
        b.append(val)
    sig_tab = _indexed_table(dyn, "sigma", 2)
    sigma = []
    for i in range(1, n + 1):
        row = []
        for k in range(1, d + 1):
            if (i, k) not in sig_tab:
                raise ProblemFileError(f"[dynamics] is missing sigma_{i}{k}")
            val, line = sig_tab.pop((i, k))
            _check_expr(val, dyn_names, line)
            row.append(val)
        sigma.append(row)
    for idx, (_v, line) in sig_tab.items():
        raise ProblemFileError(f"sigma index {idx} is out of range", line)
    h_tab = _indexed_table(dyn, "h", 3)
    h = None
    if h_tab:
        _symmetric_fill(h_tab, "h")
        h = [[["0"] * n for _ in range(d)] for _ in range(d)]
        for (i, j, k), (val, line) in h_tab.items():
            if not (1 <= i <= d and 1 <= j <= d and 1 <= k <= n):
                raise ProblemFileError(f"h index {(i, j, k)} is out of range", line)
            _check_expr(val, dyn_names, line)
            h[i - 1][j - 1][k - 1] = val

    cost = sections["cost"]
    f_val, f_line = _take(cost, "f")
    psi_val, psi_line = _take(cost, "psi")
    lam_val, lam_line = _take(cost, "lambda")
    if (f_val is None) == (psi_val is None):
        raise ProblemFileError(
            "[cost] needs exactly one of f= or psi= (with lambda=)",
            f_line if f_val is not None else psi_line,
        )
    if f_val is not None and lam_val is not None:
        raise ProblemFileError("lambda= only accompanies psi=", lam_line)
    discount = None
    if psi_val is not None:
        if lam_val is None:
            raise ProblemFileError("psi= requires lambda=", psi_line)
        discount = _float_of((lam_val, lam_line), "lambda")
        _check_expr(psi_val, dyn_names, psi_line)
    else:
        _check_expr(f_val, cost_names, f_line)
    g_tab = _indexed_table(cost, "g", 2)
    g = None
    if g_tab:
        _symmetric_fill(g_tab, "g")
        g = [["0"] * d for _ in range(d)]
        for (i, j), (val, line) in g_tab.items():
            if not (1 <= i <= d and 1 <= j <= d):
                raise ProblemFileError(f"g index {(i, j)} is out of range", line)
            _check_expr(val, cost_names, line)
            g[i - 1][j - 1] = val

    unc = sections["uncertainty"]
    lo2 = _float_of(_require(unc, "sigma_lo2", "uncertainty"), "sigma_lo2")
    hi2 = _float_of(_require(unc, "sigma_hi2", "uncertainty"), "sigma_hi2")
    cands = []
    t = 1
    while True:
        val, line = _take(unc, f"candidate_{t}")
        if val is None:
            break
        q = _parse_matrix(val, line)
        if q.shape != (d, d):
            raise ProblemFileError(f"candidate_{t} must be {d}x{d}", line)
        cands.append(q)
        t += 1
    try:
        gamma = UncertaintySet(dimension=d, sigma_lo2=lo2, sigma_hi2=hi2,
                               candidates=tuple(cands))
    except ValueError as e:
        raise ProblemFileError(f"[uncertainty] {e}")

    ctl = sections["control"]
    lval, lline = _require(ctl, "lower", "control")
    lower = _parse_floats(lval, "lower", lline)
    uval, uline = _require(ctl, "upper", "control")
    upper = _parse_floats(uval, "upper", uline)
    pts_val, pts_line = _take(ctl, "points")
    points = _int_of((pts_val, pts_line), "points") if pts_val is not None else 33
    if len(lower) != m or len(upper) != m:
        raise ProblemFileError(f"[control] lower and upper must have {m} entries")
    try:
        controls = ControlSet(lower=lower, upper=upper, points_per_axis=points)
    except ValueError as e:
        raise ProblemFileError(f"[control] {e}")

    sol = sections["solver"]
    bounds = []
    for k in range(1, n + 1):
        val, line = _require(sol, f"bounds_{k}", "solver")
        pair = _parse_floats(val, f"bounds_{k}", line)
        if len(pair) != 2 or not pair[0] < pair[1]:
            raise ProblemFileError(f"bounds_{k} must be 'lo hi' with lo < hi", line)
        bounds.append((pair[0], pair[1]))
    cval, cline = _require(sol, "counts", "solver")
    counts = [_int_of((t, cline), "counts") for t in re.split(r"[,\s]+", cval.strip()) if t]
    if len(counts) == 1:
        counts = counts * n
    if len(counts) != n:
        raise ProblemFileError(f"counts must have 1 or {n} entries", cline)
    tval, tline = _take(sol, "tol")
    tol = _float_of((tval, tline), "tol") if tval is not None else 1e-3
    mval, mline = _take(sol, "mu")
    mu = _float_of((mval, mline), "mu") if mval is not None else None

    mc = None
    if "mc" in sections:
        msec = sections["mc"]
        dt = _float_of(_require(msec, "dt", "mc"), "dt")
        tc_val, tc_line = _take(msec, "T_cut")
        T_cut = _float_of((tc_val, tc_line), "T_cut") if tc_val is not None else None
        T_val, T_line = _take(msec, "T")
        T = _float_of((T_val, T_line), "T") if T_val is not None else T_cut
        np_val, np_line = _take(msec, "n_paths")
        n_paths = _int_of((np_val, np_line), "n_paths") if np_val is not None else 10_000
        sd_val, sd_line = _take(msec, "seed")
        seed = _int_of((sd_val, sd_line), "seed") if sd_val is not None else 0
        x0_val, x0_line = _take(msec, "x0")
        x0 = tuple(_parse_floats(x0_val, "x0", x0_line)) if x0_val is not None else (0.0,) * n
        if len(x0) != n:
            raise ProblemFileError(f"x0 must have {n} entries", x0_line)
        mc = MCSettings(dt=dt, T_cut=T_cut, T=T, n_paths=n_paths, seed=seed, x0=x0)

    _reject_leftovers(sections)

    try:
        spec = spec_from_strings(
            n=n, d=d, m=m, b=b, sigma=sigma, controls=controls, gamma=gamma,
            h=h, f=f_val, g=g, psi=psi_val, discount=discount, mu=mu,
        )
    except ValueError as e:
        raise ProblemFileError(str(e))
    return LoadedProblem(
        spec=spec,
        solver=SolverSettings(bounds=tuple(bounds), counts=tuple(counts), tol=tol),
        mc=mc,
    )


def _builtin_example57(lam: float) -> LoadedProblem:
    """Scalar affine benchmark with a known answer: drift u - x, volatility
    x + u, running cost x - u under discount lam; the value function is
    (x - 1)/(lam + 1) with optimal control pinned at u = 1."""
    lam = float(lam)
    if not (lam > 0.0):
        raise ProblemFileError("example57 needs a positive lambda")
    spec = spec_from_strings(
        n=1, d=1, m=1,
        b=["-x1 + u1"],
        sigma=[["x1 + u1"]],
        controls=ControlSet(lower=[0.0], upper=[1.0], points_per_axis=33),
        gamma=UncertaintySet(dimension=1, sigma_lo2=0.5, sigma_hi2=1.0),
        psi="x1 - u1",
        discount=lam,
        mu=lam,
    )
    return LoadedProblem(
        spec=spec,
        solver=SolverSettings(bounds=((-5.0, 5.0),), counts=(201,), tol=1e-4),
        mc=MCSettings(dt=1e-3, T_cut=max(15.0, 5.0 / lam), T=1.0,
                      n_paths=5000, seed=0, x0=(0.0,)),
    )


_BUILTINS = {"example57": _builtin_example57}


def load_problem(source, lam: Optional[float] = None) -> LoadedProblem:
    """Load a problem file, or a builtin by name. lam configures the builtin
    benchmark's discount rate and is rejected for file problems."""
    name = str(source)
    if name in _BUILTINS:
        return _BUILTINS[name](1.0 if lam is None else lam)
    if lam is not None:
        raise ProblemFileError("lambda overrides apply only to builtin problems")
    try:
        return _parse_file(source)
    except OSError as e:
        raise ProblemFileError(f"cannot read problem file {name!r}: {e}")
