"""Monte Carlo side: controlled SDE paths under volatility scenarios.

The robust (worst-case) expectation is approximated from below by a finite
family of volatility scenarios: constants at the uncertainty extremes,
piecewise-constant schedules, or the bang-bang feedback rule driven by a
solved value field. Every path owns a counter-based RNG substream keyed by
(seed, path index), so results are reproducible for any worker count and
any chunking; reductions run in a fixed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from ._mckernels import get_mc_kernel
from .problem import ProblemSpec, SampleBox, check_assumptions
from .solver import Grid, ValueField, extract_policy

__all__ = [
    "VolatilityPolicy",
    "ControlPolicy",
    "PathBundle",
    "simulate_gsde",
    "robust_expectation",
    "DiscountedCostReport",
    "discounted_cost",
    "exp_martingale_moment",
    "FlowContractionResult",
    "flow_contraction_estimate",
]

_CHUNK = 1024


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True, eq=False)
class VolatilityPolicy:
    """A concrete volatility scenario: one adapted choice of the quadratic
    variation density Q_t, selecting a single measure out of the uncertainty
    family. kind is one of "constant", "schedule", "feedback"."""

    kind: str
    matrices: tuple = ()
    times: tuple = ()
    field: Optional[ValueField] = None

    @staticmethod
    def constant(Q) -> "VolatilityPolicy":
        return VolatilityPolicy(kind="constant", matrices=(_as_matrix(Q),))

    @staticmethod
    def schedule(entries) -> "VolatilityPolicy":
        entries = list(entries)
        if not entries:
            raise ValueError("schedule needs at least one (time, Q) entry")
        times = tuple(float(t) for t, _ in entries)
        mats = tuple(_as_matrix(q) for _, q in entries)
        if times[0] != 0.0:
            raise ValueError("the first schedule entry must start at time 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must be strictly increasing")
        return VolatilityPolicy(kind="schedule", matrices=mats, times=times)

    @staticmethod
    def feedback(reference: ValueField) -> "VolatilityPolicy":
        """At state x pick the scenario matrix maximizing tr[Q sigma^T A sigma]
        with A the second-difference Hessian of the reference field at the
        nearest (interior-clamped) node: the candidate worst case suggested
        by the structure of the uncertainty generator."""
        return VolatilityPolicy(kind="feedback", field=reference)


@dataclass(frozen=True, eq=False)
class ControlPolicy:
    """Either a constant admissible control or a per-node feedback table
    looked up at the nearest grid node."""

    kind: str
    u: Optional[np.ndarray] = None
    grid: Optional[Grid] = None
    values: Optional[np.ndarray] = None

    @staticmethod
    def constant(u) -> "ControlPolicy":
        return ControlPolicy(kind="constant", u=np.atleast_1d(np.asarray(u, dtype=float)))

    @staticmethod
    def feedback(grid: Grid, values) -> "ControlPolicy":
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != grid.n_nodes:
            raise ValueError("feedback table must have one row of controls per node")
        return ControlPolicy(kind="feedback", grid=grid, values=values)

    @staticmethod
    def from_field(spec: ProblemSpec, fld: ValueField) -> "ControlPolicy":
        return ControlPolicy.feedback(fld.grid, extract_policy(spec, fld))


def _as_matrix(Q) -> np.ndarray:
    q = np.asarray(Q, dtype=float)
    if q.ndim == 0:
        q = q.reshape(1, 1)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ValueError("a scenario matrix must be square")
    return q


def _check_membership(spec: ProblemSpec, q: np.ndarray):
    d = spec.d
    if q.shape != (d, d):
        raise ValueError(f"scenario matrix must be {d}x{d}, got {q.shape}")
    if np.max(np.abs(q - q.T)) > 1e-10 * (1.0 + np.max(np.abs(q))):
        raise ValueError("scenario matrix must be symmetric")
    eigs = np.linalg.eigvalsh(q)
    if eigs[0] < -1e-12:
        raise ValueError("scenario matrix is not positive semidefinite")
    lo, hi = spec.gamma.sigma_lo2, spec.gamma.sigma_hi2
    if eigs[0] < lo - 1e-9 or eigs[-1] > hi + 1e-9:
        raise ValueError(
            f"scenario eigenvalues {eigs} leave the uncertainty band [{lo}, {hi}]"
        )


def _sqrt_psd(q: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(q)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


_D_GRID = (np.ones(1, dtype=np.int64), np.ones(1, dtype=np.int64),
           np.zeros(1), np.ones(1))


def _grid_meta(grid: Grid):
    counts = np.array(grid.counts, dtype=np.int64)
    strides = np.ones(grid.n, dtype=np.int64)
    for k in range(grid.n - 2, -1, -1):
        strides[k] = strides[k + 1] * counts[k + 1]
    return counts, strides, np.array(grid.lowers), grid.spacings


def _prep_vol(spec: ProblemSpec, vol: VolatilityPolicy, dt: float, K: int):
    if vol.kind == "feedback":
        if vol.field is None:
            raise ValueError("feedback volatility policy needs a reference field")
        mats = [np.asarray(q, dtype=float) for q in spec.gamma.scenario_matrices()]
        for q in mats:
            _check_membership(spec, q)
        qarr = np.ascontiguousarray(np.stack(mats))
        sqarr = np.ascontiguousarray(np.stack([_sqrt_psd(q) for q in mats]))
        qidx = np.zeros(K, dtype=np.int64)
        meta = _grid_meta(vol.field.grid)
        return 1, qarr, sqarr, qidx, meta + (vol.field.values,)
    mats = [q for q in vol.matrices]
    for q in mats:
        _check_membership(spec, q)
    qarr = np.ascontiguousarray(np.stack(mats))
    sqarr = np.ascontiguousarray(np.stack([_sqrt_psd(q) for q in mats]))
    if vol.kind == "schedule":
        tgrid = dt * np.arange(K)
        qidx = (np.searchsorted(np.array(vol.times), tgrid, side="right") - 1).astype(np.int64)
    elif vol.kind == "constant":
        qidx = np.zeros(K, dtype=np.int64)
    else:
        raise ValueError(f"unknown volatility policy kind {vol.kind!r}")
    return 0, qarr, sqarr, qidx, _D_GRID + (np.zeros(1),)


def _prep_ctrl(spec: ProblemSpec, ctrl: ControlPolicy):
    lo, hi = spec.controls.lower, spec.controls.upper
    if ctrl.kind == "constant":
        u = np.asarray(ctrl.u, dtype=float)
        if u.shape != (spec.m,):
            raise ValueError(f"constant control must have {spec.m} components")
        if np.any(u < lo - 1e-9) or np.any(u > hi + 1e-9):
            raise ValueError("constant control leaves the admissible box")
        return 0, u, np.zeros((1, spec.m)), _D_GRID
    if ctrl.kind == "feedback":
        vals = ctrl.values
        if vals.shape[1] != spec.m:
            raise ValueError(f"feedback table must have {spec.m} control columns")
        if np.any(vals < lo - 1e-9) or np.any(vals > hi + 1e-9):
            raise ValueError("feedback table leaves the admissible control box")
        return 1, np.zeros(spec.m), np.ascontiguousarray(vals), _grid_meta(ctrl.grid)
    raise ValueError(f"unknown control policy kind {ctrl.kind!r}")


# ---------------------------------------------------------------------------
# path bundles


@dataclass
class PathBundle:
    """Simulated Euler paths: states X_k, the Brownian increments consumed,
    and the per-step quadratic-variation increments Q_k*dt actually fed to
    the h-term. flags marks paths that left the admissible range and were
    frozen."""

    dt: float
    T: float
    seed: int
    states: np.ndarray      # (n_paths, n_steps + 1, n)
    increments: np.ndarray  # (n_paths, n_steps, d)
    qv: np.ndarray          # (n_paths, n_steps, d, d)
    flags: np.ndarray       # (n_paths,) int64

    def __post_init__(self):
        if self.states.shape[0] < 1:
            raise ValueError("a path bundle needs at least one path")

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_flagged(self) -> int:
        return int(np.sum(self.flags != 0))


def _steps_for(dt: float, T: float) -> int:
    if not (dt > 0.0):
        raise ValueError("dt must be positive")
    if T < dt:
        raise ValueError("horizon T must be at least dt")
    K = int(round(T / dt))
    if abs(K * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"dt={dt!r} does not divide the horizon T={T!r}")
    return K


def _path_noise(seed: int, p0: int, count: int, K: int, d: int, out: np.ndarray):
    # out slices of a C-contiguous (chunk, K, d) buffer; ravel stays a view
    for i in range(count):
        g = np.random.Generator(np.random.Philox(key=[seed, p0 + i]))
        g.standard_normal(out=out[i].ravel())


def _validate_common(spec, x0, n_paths, seed):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (spec.n,):
        raise ValueError(f"x0 must have {spec.n} components")
    if int(n_paths) < 1:
        raise ValueError("n_paths must be at least 1")
    if int(seed) < 0:
        raise ValueError("seed must be a nonnegative integer")
    return x0, int(n_paths), int(seed)


def _dummy_outputs(spec):
    return (np.zeros((1, 1, spec.n)), np.zeros((1, 1, spec.d, spec.d)),
            np.zeros(1), np.zeros(1))


def simulate_gsde(
    spec: ProblemSpec,
    x0,
    ctrl: ControlPolicy,
    vol: VolatilityPolicy,
    dt: float,
    T: float,
    n_paths: int,
    seed: int,
    *,
    workers: int = 1,
) -> PathBundle:
    """Euler paths of the controlled uncertain-volatility SDE under one
    concrete scenario. Exploding paths are flagged and frozen, never raised."""
    x0, n_paths, seed = _validate_common(spec, x0, n_paths, seed)
    K = _steps_for(dt, T)
    kern = get_mc_kernel(spec, workers > 1)
    vol_fb, qarr, sqarr, qidx, (vc, vs, vlo, vh, vfield) = _prep_vol(spec, vol, dt, K)
    ctrl_fb, uconst, ufield, (cc, cs, clo, ch) = _prep_ctrl(spec, ctrl)
    n, d = spec.n, spec.d
    states = np.empty((n_paths, K + 1, n))
    increments = np.empty((n_paths, K, d))
    qv = np.empty((n_paths, K, d, d))
    flags = np.zeros(n_paths, dtype=np.int64)
    xT = np.empty((n_paths, n))
    _c1, _c2 = np.zeros(1), np.zeros(1)
    sqdt = math.sqrt(dt)
    noise = np.empty((min(_CHUNK, n_paths), K, d))
    for p0 in range(0, n_paths, _CHUNK):
        p1 = min(p0 + _CHUNK, n_paths)
        chunk = noise[: p1 - p0]
        _path_noise(seed, p0, p1 - p0, K, d, chunk)
        kern(x0, chunk, dt, sqdt,
             vol_fb, qarr, sqarr, qidx, vc, vs, vlo, vh, vfield,
             ctrl_fb, uconst, ufield, cc, cs, clo, ch,
             1, states[p0:p1], qv[p0:p1],
             0, 1.0,
             _c1, _c2, xT[p0:p1], flags[p0:p1])
        increments[p0:p1] = sqdt * chunk
    return PathBundle(dt=dt, T=T, seed=seed, states=states,
                      increments=increments, qv=qv, flags=flags)


# ---------------------------------------------------------------------------
# robust expectation and the discounted cost


def robust_expectation(per_scenario_estimates: Sequence) -> tuple:
    """Maximum of per-scenario (mean, std_error) estimates: a lower bound on
    the robust expectation. Returns (value, attaining index, std error of the
    attaining scenario); ties go to the lowest index."""
    ests = list(per_scenario_estimates)
    if not ests:
        raise ValueError("at least one scenario estimate is required")
    best = 0
    for i, (mean, _se) in enumerate(ests):
        if not np.isfinite(mean):
            raise ValueError(f"scenario {i} has a non-finite mean")
        if mean > ests[best][0]:
            best = i
    return float(ests[best][0]), best, float(ests[best][1])


@dataclass(frozen=True)
class DiscountedCostReport:
    value: float              # robust (max over scenarios) cost estimate
    scenario: int             # attaining scenario index
    std_error: float          # std error of the attaining scenario
    per_scenario: tuple       # ((mean, std_error), ...) in family order
    tail_bound: float         # observed-growth bound on the truncated tail
    n_flagged: int
    n_paths: int
    dt: float
    t_cut: float


def discounted_cost(
    spec: ProblemSpec,
    x0,
    ctrl: ControlPolicy,
    family: Sequence[VolatilityPolicy],
    dt: float,
    T_cut: float,
    n_paths: int,
    seed: int,
    *,
    workers: int = 1,
) -> DiscountedCostReport:
    """Trapezoidal Monte Carlo estimate of the discounted infinite-horizon
    cost, truncated at T_cut and maximized over the scenario family. Requires
    the discounted cost shorthand (psi with a discount rate) on the problem.
    All scenarios share one set of Brownian paths (common random numbers)."""
    if spec.psi is None or spec.discount is None:
        raise ValueError(
            "discounted_cost needs the discounted-cost form of the problem "
            "(psi and a positive discount rate)"
        )
    lam = spec.discount
    if T_cut < 5.0 / lam:
        raise ValueError(
            f"T_cut={T_cut!r} is below 5/discount={5.0 / lam!r}; the truncated "
            "tail would dominate the quadrature tolerance"
        )
    family = list(family)
    if not family:
        raise ValueError("the scenario family must be nonempty")
    x0, n_paths, seed = _validate_common(spec, x0, n_paths, seed)
    K = _steps_for(dt, T_cut)
    kern = get_mc_kernel(spec, workers > 1)
    ctrl_fb, uconst, ufield, (cc, cs, clo, ch) = _prep_ctrl(spec, ctrl)
    vols = [_prep_vol(spec, v, dt, K) for v in family]
    n, d = spec.n, spec.d
    S = len(family)
    costs = np.empty((S, n_paths))
    flags = np.zeros((S, n_paths), dtype=np.int64)
    psimax = np.empty((S, n_paths))
    xT = np.empty((n_paths, n))
    dstates, dqv, _c1, _c2 = _dummy_outputs(spec)
    sqdt = math.sqrt(dt)
    dfac = math.exp(-lam * dt)
    noise = np.empty((min(_CHUNK, n_paths), K, d))
    for p0 in range(0, n_paths, _CHUNK):
        p1 = min(p0 + _CHUNK, n_paths)
        chunk = noise[: p1 - p0]
        _path_noise(seed, p0, p1 - p0, K, d, chunk)
        for s, (vol_fb, qarr, sqarr, qidx, (vc, vs, vlo, vh, vfield)) in enumerate(vols):
            kern(x0, chunk, dt, sqdt,
                 vol_fb, qarr, sqarr, qidx, vc, vs, vlo, vh, vfield,
                 ctrl_fb, uconst, ufield, cc, cs, clo, ch,
                 0, dstates, dqv,
                 1, dfac,
                 costs[s, p0:p1], psimax[s, p0:p1], xT[p0:p1], flags[s, p0:p1])
    per = []
    for s in range(S):
        mean = float(np.mean(costs[s]))
        se = float(np.std(costs[s], ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
        per.append((mean, se))
    value, idx, err = robust_expectation(per)
    tail = float(np.max(psimax)) * math.exp(-lam * T_cut) / lam
    return DiscountedCostReport(
        value=value, scenario=idx, std_error=err, per_scenario=tuple(per),
        tail_bound=tail, n_flagged=int(np.sum(flags != 0)),
        n_paths=n_paths, dt=dt, t_cut=T_cut,
    )


# ---------------------------------------------------------------------------
# analytic-lemma checks


def exp_martingale_moment(
    gamma,
    alpha2: float,
    q: float,
    p: float,
    t: float,
    n_paths: int,
    seed: int,
) -> tuple:
    """p-th moment of the exponential martingale exp(beta*B_t - beta^2/2 <B>_t)
    with |beta| = alpha2, under the constant scenario <B>_t = q*t. Returns
    (estimate, std_error, bound) where bound = exp(C_G (p^2 - p) alpha2^2 t)
    and C_G = 1 + (sigma_hi2 + 1/sigma_lo2)/2. The estimate must sit below
    the bound since C_G >= 1 >= q/2 for every admissible scenario."""
    if p < 1.0:
        raise ValueError("the moment order p must be at least 1")
    if alpha2 < 0.0:
        raise ValueError("alpha2 is a bound on |beta| and must be nonnegative")
    if not (t > 0.0):
        raise ValueError("t must be positive")
    lo, hi = gamma.sigma_lo2, gamma.sigma_hi2
    if q < lo - 1e-12 or q > hi + 1e-12:
        raise ValueError(f"scenario q={q!r} leaves the uncertainty band [{lo}, {hi}]")
    if int(n_paths) < 2:
        raise ValueError("n_paths must be at least 2")
    cg = 1.0 + 0.5 * (hi + 1.0 / lo)
    bound = math.exp(cg * (p * p - p) * alpha2 * alpha2 * t)
    rng = np.random.Generator(np.random.Philox(key=[int(seed), 0]))
    xi = rng.standard_normal(int(n_paths))
    qt = q * t
    samples = np.exp(p * (alpha2 * math.sqrt(qt) * xi - 0.5 * alpha2 * alpha2 * qt))
    estimate = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n_paths))
    return estimate, se, bound


class FlowContractionResult(NamedTuple):
    estimate: float    # MC estimate of E|X^x_t - X^y_t|^2
    bound: float       # exp(-2 eta_hat t) |x - y|^2
    std_error: float
    passed: bool       # estimate <= bound + 3 std errors
    eta_hat: float


def flow_contraction_estimate(
    spec: ProblemSpec,
    x,
    y,
    vol: VolatilityPolicy,
    ctrl: ControlPolicy,
    dt: float,
    t: float,
    n_paths: int,
    seed: int,
    *,
    eta_hat: Optional[float] = None,
    workers: int = 1,
) -> FlowContractionResult:
    """Synchronously coupled flows from two starting points: both runs share
    the same Brownian increments and the same control/scenario policies, and
    the mean squared distance at time t is compared against the dissipativity
    bound exp(-2 eta_hat t)|x - y|^2. When eta_hat is not supplied it is
    measured by the assumption checker on a box spanning the starting points."""
    x0a, n_paths, seed = _validate_common(spec, x, n_paths, seed)
    x0b = np.atleast_1d(np.asarray(y, dtype=float))
    if x0b.shape != (spec.n,):
        raise ValueError(f"y must have {spec.n} components")
    K = _steps_for(dt, t)
    kern = get_mc_kernel(spec, workers > 1)
    vol_fb, qarr, sqarr, qidx, (vc, vs, vlo, vh, vfield) = _prep_vol(spec, vol, dt, K)
    ctrl_fb, uconst, ufield, (cc, cs, clo, ch) = _prep_ctrl(spec, ctrl)
    n, d = spec.n, spec.d
    sqdist = np.empty(n_paths)
    flags = np.zeros(n_paths, dtype=np.int64)
    dstates, dqv, _c1, _c2 = _dummy_outputs(spec)
    xTa = np.empty((min(_CHUNK, n_paths), n))
    xTb = np.empty((min(_CHUNK, n_paths), n))
    fl = np.zeros((2, min(_CHUNK, n_paths)), dtype=np.int64)
    sqdt = math.sqrt(dt)
    noise = np.empty((min(_CHUNK, n_paths), K, d))
    for p0 in range(0, n_paths, _CHUNK):
        p1 = min(p0 + _CHUNK, n_paths)
        c = p1 - p0
        chunk = noise[:c]
        _path_noise(seed, p0, c, K, d, chunk)
        for x0, xT, fr in ((x0a, xTa, fl[0]), (x0b, xTb, fl[1])):
            kern(x0, chunk, dt, sqdt,
                 vol_fb, qarr, sqarr, qidx, vc, vs, vlo, vh, vfield,
                 ctrl_fb, uconst, ufield, cc, cs, clo, ch,
                 0, dstates, dqv,
                 0, 1.0,
                 _c1, _c2, xT[:c], fr[:c])
        sqdist[p0:p1] = np.sum((xTa[:c] - xTb[:c]) ** 2, axis=1)
        flags[p0:p1] = fl[0, :c] | fl[1, :c]
    estimate = float(np.mean(sqdist))
    se = float(np.std(sqdist, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    if eta_hat is None:
        lo = np.minimum(x0a, x0b) - 1.0
        hi = np.maximum(x0a, x0b) + 1.0
        box = SampleBox(x_lo=lo, x_hi=hi)
        eta_hat = check_assumptions(spec, box, n_samples=200, rng_seed=0).eta_hat
    gap = float(np.sum((x0a - x0b) ** 2))
    bound = math.exp(-2.0 * float(eta_hat) * t) * gap
    return FlowContractionResult(
        estimate=estimate, bound=bound, std_error=se,
        passed=bool(estimate <= bound + 3.0 * se), eta_hat=float(eta_hat),
    )
