"""Cross-checks for solved value fields.

Three independent instruments: the pointwise optimality residual of a
candidate feedback control plugged into the stationary operator (zero at
every interior node certifies optimality), the closed-form solution of the
scalar affine benchmark, and empirical quadratic-growth / weighted-Lipschitz
constants fitted from a computed field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple, Union

import numpy as np

from .problem import ProblemSpec, eval_drift, eval_f, eval_sigma, g_of
from .solver import EvaluationPoint, ValueField, compute_H

__all__ = [
    "VerificationReport",
    "verify_control_residual",
    "example57_oracle",
    "fit_growth_lipschitz",
]


@dataclass(frozen=True)
class VerificationReport:
    """Pointwise optimality residuals of a candidate control over the
    interior subgrid, in absolute value."""

    sup: float
    mean: float
    worst_x: tuple          # coordinates of the worst offending node
    worst_index: int        # flat node index of the worst offender
    tolerance: float
    passed: bool
    n_nodes: int

    def __post_init__(self):
        if not (self.sup >= self.mean >= 0.0):
            raise ValueError("residual summary must satisfy sup >= mean >= 0")

    def as_record(self) -> dict:
        return {
            "sup": self.sup,
            "mean": self.mean,
            "worst_x": list(self.worst_x),
            "worst_index": self.worst_index,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "n_nodes": self.n_nodes,
        }


DerivativeSource = Union[
    str, Tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]
]


def _control_at(ctrl, x: np.ndarray, node_index: int, same_grid: bool) -> np.ndarray:
    if ctrl.kind == "constant":
        return ctrl.u
    if ctrl.kind == "feedback":
        if same_grid:
            return ctrl.values[node_index]
        counts = np.array(ctrl.grid.counts)
        idx = 0
        for k in range(ctrl.grid.n):
            h = ctrl.grid.spacings[k]
            i = int(math.floor((x[k] - ctrl.grid.lowers[k]) / h + 0.5))
            i = min(max(i, 0), counts[k] - 1)
            idx = idx * counts[k] + i
        return ctrl.values[idx]
    raise ValueError(f"unknown control policy kind {ctrl.kind!r}")


def verify_control_residual(
    spec: ProblemSpec,
    field: ValueField,
    ctrl,
    *,
    tolerance: float = 5e-3,
    derivatives: DerivativeSource = "stencil",
) -> VerificationReport:
    """Evaluate G(H) + <p, b> + f at every interior node with the candidate
    control plugged in. A vanishing residual certifies the control as optimal
    for the field.

    derivatives selects where p and A come from and is never inferred:
    "stencil" uses the central differences of the field (the solver's own
    reading of it); a (gradient, hessian) pair of callables x -> p, x -> A
    evaluates an analytic claim instead. The field always supplies the y
    argument of the cost.
    """
    grid = field.grid
    counts = grid.counts
    n = grid.n
    vals = field.values.reshape(counts)
    interior = grid.interior_mask().reshape(counts)
    # the stencil needs every neighbor; trim flat-margin axes to be safe
    strict = np.zeros(counts, dtype=bool)
    strict[tuple(slice(1, c - 1) for c in counts)] = True
    use = interior & strict if derivatives == "stencil" else interior
    if not np.any(use):
        raise ValueError("no interior nodes with full stencils to verify at")

    coords = grid.node_coords().reshape(counts + (n,))
    same_grid = getattr(ctrl, "grid", None) is not None and ctrl.grid._key() == grid._key()
    h = grid.spacings

    analytic = derivatives != "stencil"
    if analytic:
        grad_fn, hess_fn = derivatives

    worst = -1.0
    worst_flat = -1
    worst_x = None
    total = 0.0
    count = 0
    flat_strides = np.ones(n, dtype=int)
    for k in range(n - 2, -1, -1):
        flat_strides[k] = flat_strides[k + 1] * counts[k + 1]

    for idx in np.argwhere(use):
        tidx = tuple(idx)
        x = coords[tidx]
        flat = int(np.dot(idx, flat_strides))
        if analytic:
            p = np.atleast_1d(np.asarray(grad_fn(x), dtype=float))
            A = np.atleast_2d(np.asarray(hess_fn(x), dtype=float))
        else:
            p = np.empty(n)
            A = np.empty((n, n))
            for a in range(n):
                up = tidx[:a] + (idx[a] + 1,) + tidx[a + 1:]
                dn = tidx[:a] + (idx[a] - 1,) + tidx[a + 1:]
                p[a] = (vals[up] - vals[dn]) / (2.0 * h[a])
                A[a, a] = (vals[up] - 2.0 * vals[tidx] + vals[dn]) / (h[a] * h[a])
            for a in range(n):
                for c in range(a + 1, n):
                    pp = list(tidx); pp[a] += 1; pp[c] += 1
                    mm = list(tidx); mm[a] -= 1; mm[c] -= 1
                    pm = list(tidx); pm[a] += 1; pm[c] -= 1
                    mp = list(tidx); mp[a] -= 1; mp[c] += 1
                    cross = (vals[tuple(pp)] + vals[tuple(mm)]
                             - vals[tuple(pm)] - vals[tuple(mp)]) / (4.0 * h[a] * h[c])
                    A[a, c] = cross
                    A[c, a] = cross
        v = float(vals[tidx])
        u = np.atleast_1d(np.asarray(_control_at(ctrl, x, flat, same_grid), dtype=float))
        pt = EvaluationPoint(x=x, v=v, p=p, A=A, u=u)
        H = compute_H(spec, pt)
        z = p @ eval_sigma(spec, x, u)
        r = g_of(spec.gamma, H) + float(p @ eval_drift(spec, x, u))
        r += eval_f(spec, x, u, v, z)
        r = abs(r)
        total += r
        count += 1
        if r > worst:
            worst = r
            worst_flat = flat
            worst_x = x
    return VerificationReport(
        sup=float(worst),
        mean=float(total / count),
        worst_x=tuple(float(c) for c in worst_x),
        worst_index=worst_flat,
        tolerance=float(tolerance),
        passed=bool(worst <= tolerance),
        n_nodes=count,
    )


def example57_oracle(lam: float, x: float) -> tuple:
    """Closed-form answer for the scalar benchmark with drift u - x,
    volatility x + u, running cost x - u and discount rate lam: the value is
    affine, V(x) = (x - 1)/(lam + 1), and the optimal control sits at the
    upper endpoint u = 1 regardless of the state."""
    lam = float(lam)
    if not (lam > 0.0):
        raise ValueError("the discount rate must be positive")
    return (float(x) - 1.0) / (lam + 1.0), 1.0


def fit_growth_lipschitz(field: ValueField, *, max_pairs: int = 100_000) -> tuple:
    """Empirical constants of a computed field over the interior subgrid:

      C_growth = max |V(x)| / (1 + |x|^2)
      C_lip    = max |V(x) - V(y)| / ((1 + |x| + |y|) |x - y|)

    The Lipschitz quotient runs over all interior node pairs when there are
    at most max_pairs of them, otherwise over max_pairs pairs sampled with a
    fixed seed, so repeated calls agree."""
    mask = field.grid.interior_mask()
    xs = field.grid.node_coords()[mask]
    vs = field.values[mask]
    N = xs.shape[0]
    if N < 2:
        raise ValueError("need at least two interior nodes")
    norms = np.linalg.norm(xs, axis=1)
    c_growth = float(np.max(np.abs(vs) / (1.0 + norms ** 2)))
    n_pairs = N * (N - 1) // 2
    if n_pairs <= max_pairs:
        i, j = np.triu_indices(N, k=1)
    else:
        rng = np.random.default_rng(0)
        i = rng.integers(0, N, size=max_pairs)
        j = rng.integers(0, N, size=max_pairs)
        keep = i != j
        i, j = i[keep], j[keep]
    dv = np.abs(vs[i] - vs[j])
    dx = np.linalg.norm(xs[i] - xs[j], axis=1)
    weight = (1.0 + norms[i] + norms[j]) * dx
    c_lip = float(np.max(dv / weight))
    return c_growth, c_lip
