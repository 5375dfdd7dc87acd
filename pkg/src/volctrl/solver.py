"""Grid solver for the stationary robust control equation.

The stationary equation

    inf_u [ G(H(x, v, Dv, D2v, u)) + <Dv, b(x,u)> + f(x, v, Dv sigma(x,u), u) ] = 0

is solved by backward parabolic flow: explicit monotone finite-difference
steps of the evolution form of the same operator, run until the value field
stops moving. Cost dissipativity in y makes the flow a sup-norm contraction,
so the horizon truncation converges at an exponential rate and the terminal
guess is forgotten.

Scheme notes
------------
Upwind one-sided first differences are selected per uncertainty scenario by
the sign of the scenario drift b + h:Q; second differences are central;
cross derivatives (n >= 2) use the monotone seven-point splitting and the
step refuses when the scenario diffusion matrices are not diagonally
dominant. The z argument of f and g is wired as the central-difference
gradient times sigma(x, u). Boundary nodes drop the terms whose neighbors
are missing (keeping the scheme monotone); every convergence statement is
made on the interior subgrid only.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from ._kernels import CFLError, NumericalError, build_tables, fast_eligible, get_kernels
from .problem import (
    ProblemSpec,
    SampleBox,
    check_assumptions,
    eval_drift,
    eval_f,
    eval_g,
    eval_h,
    eval_sigma,
    g_of,
)

__all__ = [
    "Grid",
    "ValueField",
    "EvaluationPoint",
    "SolveReport",
    "CFLError",
    "NumericalError",
    "build_grid",
    "admissible_dt",
    "compute_H",
    "hjbi_residual_at",
    "parabolic_step",
    "backward_semigroup",
    "solve_elliptic",
    "extract_policy",
    "dpp_residual",
]


@dataclass(frozen=True)
class Grid:
    """Uniform box grid over the state space.

    Nodes are ordered row-major (axis 0 slowest). `margin` is the fraction
    of each axis trimmed from both ends to form the interior subgrid on
    which all convergence and acceptance statements are made.
    """

    lowers: tuple
    uppers: tuple
    counts: tuple
    margin: float = 0.2

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lowers))
        hi = tuple(float(v) for v in np.atleast_1d(self.uppers))
        cn = tuple(int(v) for v in np.atleast_1d(self.counts))
        object.__setattr__(self, "lowers", lo)
        object.__setattr__(self, "uppers", hi)
        object.__setattr__(self, "counts", cn)
        if not (len(lo) == len(hi) == len(cn)) or len(lo) == 0:
            raise ValueError("bounds and counts must have equal nonzero length")
        for a, b in zip(lo, hi):
            if not (b > a):
                raise ValueError(f"grid extent must be positive, got [{a}, {b}]")
        for c in cn:
            if c < 3:
                raise ValueError("each axis needs at least 3 points")
        if not (0.0 <= self.margin < 0.5):
            raise ValueError("margin must lie in [0, 0.5)")

    @property
    def n(self) -> int:
        return len(self.counts)

    @property
    def n_nodes(self) -> int:
        out = 1
        for c in self.counts:
            out *= c
        return out

    @property
    def spacings(self) -> np.ndarray:
        return np.array(
            [(b - a) / (c - 1) for a, b, c in zip(self.lowers, self.uppers, self.counts)]
        )

    def axes(self) -> list:
        return [
            np.linspace(a, b, c)
            for a, b, c in zip(self.lowers, self.uppers, self.counts)
        ]

    def node_coords(self) -> np.ndarray:
        """All node coordinates, shape (n_nodes, n), row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def interior_mask(self) -> np.ndarray:
        """Boolean mask of the trusted interior subgrid, shape (n_nodes,)."""
        masks = []
        for c in self.counts:
            cut = int(round(self.margin * (c - 1)))
            ax = np.zeros(c, dtype=bool)
            ax[cut : c - cut] = True
            masks.append(ax)
        out = masks[0]
        for m in masks[1:]:
            out = out[..., None] & m
        return out.ravel()

    def _key(self) -> tuple:
        return (self.lowers, self.uppers, self.counts, self.margin)


def build_grid(bounds, counts) -> Grid:
    """Uniform grid from per-axis (lower, upper) pairs and point counts.

    `counts` may be a single integer (applied to every axis) or a sequence.
    """
    bounds = list(bounds)
    if bounds and np.isscalar(bounds[0]):
        bounds = [tuple(bounds)]
    if np.isscalar(counts):
        counts = [counts] * len(bounds)
    lowers = tuple(b[0] for b in bounds)
    uppers = tuple(b[1] for b in bounds)
    return Grid(lowers=lowers, uppers=uppers, counts=tuple(counts))


@dataclass
class ValueField:
    """A value function sampled on a grid, with an optional feedback policy
    stored as control-lattice indices per node."""

    grid: Grid
    values: np.ndarray
    policy: Optional[np.ndarray] = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).ravel()
        if vals.shape[0] != self.grid.n_nodes:
            raise ValueError(
                f"value array has {vals.shape[0]} entries, grid has {self.grid.n_nodes} nodes"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("value field must be finite everywhere")
        self.values = vals
        if self.policy is not None:
            pol = np.array(self.policy, dtype=np.int64).ravel()
            if pol.shape[0] != self.grid.n_nodes:
                raise ValueError("policy array length must equal the node count")
            self.policy = pol


@dataclass(frozen=True)
class EvaluationPoint:
    """Arguments of the Hamiltonian matrix at one state: value v, gradient p,
    Hessian A, control u. The cost gradient argument z is always derived as
    p . sigma(x, u), never stored."""

    x: np.ndarray
    v: float
    p: np.ndarray
    A: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = x.size
        if p.size != n or A.shape != (n, n):
            raise ValueError("gradient/Hessian dimensions must match the state")
        if np.max(np.abs(A - A.T), initial=0.0) > 1e-9 * max(1.0, float(np.max(np.abs(A), initial=0.0))):
            raise ValueError("Hessian argument must be symmetric")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "A", 0.5 * (A + A.T))
        object.__setattr__(self, "v", float(self.v))


@dataclass(frozen=True)
class SolveReport:
    """Diagnostics of one stationary solve."""

    iterations: int            # total explicit steps taken
    dt: float                  # step size used
    horizon: float             # total backward time integrated
    change_history: tuple      # sup-norm interior change per unit-time window
    rate: float                # fitted exponential decay rate of the history
    residual_norm: float       # sup-norm of the stationary residual, interior
    converged: bool
    message: str = ""


# ---------------------------------------------------------------------------
# pointwise operator evaluation (pure Python, reference semantics)


def z_vector(spec: ProblemSpec, x, p, u) -> np.ndarray:
    """Cost gradient argument z = p . sigma(x, u), one entry per noise axis."""
    sig = eval_sigma(spec, x, u)
    return np.asarray(p, dtype=float) @ sig


def compute_H(spec: ProblemSpec, pt: EvaluationPoint) -> np.ndarray:
    """Hamiltonian matrix H_ij = (sigma^T A sigma)_ij + 2<p, h_ij> + 2 g_ij,
    with g evaluated at (x, v, z, u) and z derived from pt. Output is
    symmetrized; asymmetry beyond 1e-12 is flagged with a warning."""
    if pt.x.size != spec.n or pt.u.size != spec.m:
        raise ValueError("evaluation point dimensions do not match the problem")
    sig = eval_sigma(spec, pt.x, pt.u)
    z = pt.p @ sig
    H = sig.T @ pt.A @ sig
    if not spec.h_is_zero():
        hv = eval_h(spec, pt.x, pt.u)
        H = H + 2.0 * np.einsum("k,ijk->ij", pt.p, hv)
    if not spec.g_is_zero():
        H = H + 2.0 * eval_g(spec, pt.x, pt.u, pt.v, z)
    dev = float(np.max(np.abs(H - H.T), initial=0.0))
    if dev > 1e-12 * max(1.0, float(np.max(np.abs(H), initial=0.0))):
        warnings.warn(f"Hamiltonian matrix asymmetry {dev:g} exceeds 1e-12")
    return 0.5 * (H + H.T)


def hjbi_residual_at(spec: ProblemSpec, x, v, p, A):
    """Stationary residual inf_u [G(H) + <p, b> + f] at one state, by full
    enumeration of the control lattice. Ties go to the lowest lattice index.

    Returns (residual, argmin control vector).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    lattice = spec.controls.lattice()
    best = np.inf
    best_u = lattice[0]
    for u in lattice:
        pt = EvaluationPoint(x=x, v=v, p=p, A=A, u=u)
        H = compute_H(spec, pt)
        z = p @ eval_sigma(spec, x, u)
        val = g_of(spec.gamma, H) + float(p @ eval_drift(spec, x, u))
        val += eval_f(spec, x, u, v, z)
        if val < best:
            best = val
            best_u = u
    return float(best), np.array(best_u)


# ---------------------------------------------------------------------------
# table/kernel plumbing


_TABLE_CACHE: dict = {}


def _spec_key(spec: ProblemSpec) -> tuple:
    return (
        spec.signature(),
        spec.gamma.dimension,
        spec.gamma.sigma_lo2,
        spec.gamma.sigma_hi2,
        tuple(q.tobytes() for q in spec.gamma.candidates),
        spec.controls.lower.tobytes(),
        spec.controls.upper.tobytes(),
        spec.controls.points_per_axis,
    )


def _get_tables(spec: ProblemSpec, grid: Grid) -> _kernels.Tables:
    if grid.n != spec.n:
        raise ValueError("grid dimension does not match the problem state dimension")
    key = (_spec_key(spec), grid._key())
    hit = _TABLE_CACHE.get(key)
    if hit is None:
        hit = build_tables(spec, grid.axes())
        _TABLE_CACHE[key] = hit
    return hit


def admissible_dt(spec: ProblemSpec, grid: Grid) -> float:
    """Largest explicit step the stability rule allows on this grid:
    0.9 / max over nodes, controls, and scenarios of
    [ sum_k |drift_k|/h_k + sigma_hi2 * sum_k (sigma sigma^T)_kk / h_k^2 * n
      + |df/dy| bound ]."""
    return _get_tables(spec, grid).admissible_dt


def _workers_blocks(workers: int) -> int:
    workers = int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


def _check_finite(vals: np.ndarray, what: str):
    if not np.all(np.isfinite(vals)):
        bad = int(np.argmin(np.isfinite(vals)))
        raise NumericalError(
            f"non-finite values in {what} (first at node {bad}); the step is "
            "stability-bounded, so this indicates a coefficient domain failure"
        )


def _scan(spec: ProblemSpec, t: _kernels.Tables, vals: np.ndarray, workers: int):
    """One argmin sweep: per-node integrand minimum and its lattice index."""
    step, _ = get_kernels(spec, workers > 1)
    acc = np.empty_like(vals)
    out = np.empty_like(vals)
    pol = np.zeros(vals.shape[0], dtype=np.int64)
    step(vals, out, acc, pol, *t.static_args(), 0.0, 1, _workers_blocks(workers))
    return out, pol


def _run_steps(spec, t, vals, dt, k, workers):
    if dt > t.admissible_dt * (1.0 + 1e-12):
        raise CFLError(dt, t.admissible_dt)
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    step, multi = get_kernels(spec, workers > 1)
    a = np.array(vals, dtype=np.float64)
    b = np.empty_like(a)
    acc = np.empty_like(a)
    pol = np.zeros(a.shape[0], dtype=np.int64)
    which = multi(a, b, acc, pol, *t.static_args(), float(dt), int(k), _workers_blocks(workers))
    return (b if which else a), pol


# ---------------------------------------------------------------------------
# public stepping operations


def parabolic_step(spec: ProblemSpec, field: ValueField, dt: float, *, workers: int = 1) -> ValueField:
    """One explicit backward-time step: new = old + dt * (per-node stationary
    integrand minimum), with the policy refreshed from the same sweep.
    Refuses dt beyond the admissible stability bound."""
    t = _get_tables(spec, field.grid)
    out, pol = _run_steps(spec, t, field.values, dt, 1, workers)
    _check_finite(out, "parabolic step output")
    return ValueField(grid=field.grid, values=out, policy=pol)


def backward_semigroup(
    spec: ProblemSpec,
    s: float,
    terminal: ValueField,
    dt: Optional[float] = None,
    *,
    workers: int = 1,
) -> ValueField:
    """Flow the terminal field backward over a window of length s by
    composing s/dt explicit steps (dt must divide s; when omitted, the
    largest admissible divisor of s is used)."""
    if not (s > 0.0):
        raise ValueError("window length s must be positive")
    t = _get_tables(spec, terminal.grid)
    if dt is None:
        k = max(1, int(math.ceil(s / t.admissible_dt - 1e-12)))
        dt = s / k
    else:
        k = int(round(s / dt))
        if k < 1 or abs(k * dt - s) > 1e-9 * max(1.0, s):
            raise ValueError(f"dt={dt!r} does not divide the window s={s!r}")
    out, pol = _run_steps(spec, t, terminal.values, dt, k, workers)
    _check_finite(out, "semigroup output")
    return ValueField(grid=terminal.grid, values=out, policy=pol)


def solve_elliptic(
    spec: ProblemSpec,
    grid: Grid,
    tol: float = 1e-3,
    initial: Optional[ValueField] = None,
    *,
    workers: int = 1,
    max_horizon: Optional[float] = None,
    growth_budget: float = 1e6,
):
    """Stationary value function by horizon truncation.

    Runs the parabolic flow from the terminal guess (default 0) in unit-time
    windows until the sup-norm change of one window, on the interior subgrid,
    drops below tol. The dissipativity rate makes the window changes decay
    exponentially, so the fitted rate of the change history is reported.
    Non-convergence within the horizon cap (default 40 / mu) is reported in
    the SolveReport, with the last field still returned.

    Returns (ValueField with refreshed policy, SolveReport).
    """
    if not (tol > 0.0):
        raise ValueError("tol must be positive")
    t = _get_tables(spec, grid)
    n_steps_window = max(1, int(math.ceil(1.0 / t.admissible_dt - 1e-12)))
    dt = 1.0 / n_steps_window

    mu = spec.mu
    if mu is None:
        box = SampleBox(x_lo=np.array(grid.lowers), x_hi=np.array(grid.uppers))
        rep = check_assumptions(spec, box, n_samples=256, rng_seed=0)
        mu = rep.mu_hat
        if not np.isfinite(mu) or mu <= 0.0:
            raise ValueError(
                "no positive cost-dissipativity rate could be estimated "
                f"(mu_hat={mu!r}); supply mu on the problem"
            )
    cap = max_horizon if max_horizon is not None else 40.0 / mu
    max_windows = max(1, int(math.ceil(cap - 1e-12)))

    if initial is not None:
        if initial.grid._key() != grid._key():
            raise ValueError("initial field lives on a different grid")
        v = np.array(initial.values, dtype=np.float64)
    else:
        v = np.zeros(grid.n_nodes, dtype=np.float64)

    interior = grid.interior_mask()
    history = []
    iterations = 0
    converged = False
    horizon = 0.0
    for _ in range(max_windows):
        prev = v
        v, _pol = _run_steps(spec, t, v, dt, n_steps_window, workers)
        _check_finite(v, "solve iterate")
        iterations += n_steps_window
        horizon += 1.0
        chg = float(np.max(np.abs(v[interior] - prev[interior])))
        history.append(chg)
        if chg < tol:
            converged = True
            break

    integrand, pol = _scan(spec, t, v, workers)
    residual_norm = float(np.max(np.abs(integrand[interior])))
    field = ValueField(grid=grid, values=v, policy=pol)

    xsq = np.sum(grid.node_coords() ** 2, axis=1)
    cg = float(np.max(np.abs(v) / (1.0 + xsq)))
    if cg > growth_budget:
        raise NumericalError(
            f"solved field violates the quadratic growth budget: "
            f"fitted coefficient {cg:g} > budget {growth_budget:g}"
        )

    message = "" if converged else (
        f"not converged: last window change {history[-1]:g} >= tol {tol:g} "
        f"after horizon {horizon:g} (cap {cap:g})"
    )
    report = SolveReport(
        iterations=iterations,
        dt=dt,
        horizon=horizon,
        change_history=tuple(history),
        rate=_fit_rate(history),
        residual_norm=residual_norm,
        converged=converged,
        message=message,
    )
    return field, report


def _fit_rate(history) -> float:
    """Exponential decay rate fitted to the positive tail of the window
    change history (log-linear least squares, two-window burn-in)."""
    pts = [(i, math.log(c)) for i, c in enumerate(history) if c > 0.0]
    if len(pts) >= 4:
        pts = pts[2:]
    if len(pts) < 2:
        return float("nan")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    slope = np.polyfit(xs, ys, 1)[0]
    return float(-slope)


def extract_policy(spec: ProblemSpec, field: ValueField) -> np.ndarray:
    """Per-node minimizing control over the lattice, as control values with
    shape (n_nodes, m); ties go to the lowest lattice index."""
    t = _get_tables(spec, field.grid)
    _integrand, pol = _scan(spec, t, field.values, 1)
    return t.ulat[pol]


def dpp_residual(spec: ProblemSpec, field: ValueField, s: float, dt: Optional[float] = None) -> float:
    """Sup-norm distance, on the interior subgrid, between the field and its
    own backward flow over a window of length s: a direct check of the
    dynamic programming identity for the stationary value."""
    flowed = backward_semigroup(spec, s, field, dt)
    interior = field.grid.interior_mask()
    return float(np.max(np.abs(field.values[interior] - flowed.values[interior])))
