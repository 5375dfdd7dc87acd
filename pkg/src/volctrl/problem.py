"""Problem definition: control and uncertainty sets, the sublinear generator
g_of, the full coefficient bundle ProblemSpec, and a sampling-based checker
for the structural and dissipativity assumptions the solver relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .expressions import (
    EvaluationError,
    Expression,
    eval_expression,
    parse_expression,
)

_SYM_TOL = 1e-9
_EIG_TOL = 1e-10


def state_var_names(n: int) -> tuple[str, ...]:
    return tuple(f"x{i + 1}" for i in range(n))


def control_var_names(m: int) -> tuple[str, ...]:
    return tuple(f"u{i + 1}" for i in range(m))


def cost_var_names(n: int, d: int, m: int) -> tuple[str, ...]:
    return state_var_names(n) + control_var_names(m) + ("y",) + tuple(
        f"z{j + 1}" for j in range(d)
    )


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Compact box of admissible controls, discretized as a uniform lattice.

    lower/upper are componentwise bounds (length m); the lattice has
    points_per_axis points per component, ordered row major (last component
    fastest), which fixes the meaning of "lowest lattice index".
    """

    lower: np.ndarray
    upper: np.ndarray
    points_per_axis: int = 33

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("control bounds must be vectors of equal length")
        if lo.size == 0:
            raise ValueError("control set needs at least one component")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("control bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("control lower bound exceeds upper bound")
        if int(self.points_per_axis) < 1:
            raise ValueError("points_per_axis must be positive")
        object.__setattr__(self, "points_per_axis", int(self.points_per_axis))

    @property
    def m(self) -> int:
        return self.lower.size

    def lattice(self) -> np.ndarray:
        """All lattice points, shape (points_per_axis**m, m), row major."""
        axes = [
            np.linspace(self.lower[k], self.upper[k], self.points_per_axis)
            for k in range(self.m)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)


@dataclass(frozen=True, eq=False)
class UncertaintySet:
    """Volatility uncertainty set: symmetric matrices Q with
    sigma_lo2 * I <= Q <= sigma_hi2 * I (eigenvalue bounds).

    For dimension 1 the interval endpoints are implied and `candidates` may be
    empty; for dimension >= 2 a finite candidate list is required wherever the
    generator is evaluated (a documented lower approximation).
    """

    dimension: int
    sigma_lo2: float
    sigma_hi2: float
    candidates: tuple = ()

    def __post_init__(self):
        d = int(self.dimension)
        object.__setattr__(self, "dimension", d)
        lo = float(self.sigma_lo2)
        hi = float(self.sigma_hi2)
        object.__setattr__(self, "sigma_lo2", lo)
        object.__setattr__(self, "sigma_hi2", hi)
        if d < 1:
            raise ValueError("dimension must be >= 1")
        if not (lo > 0.0):
            raise ValueError("sigma_lo2 must be > 0 (non-degeneracy)")
        if hi < lo:
            raise ValueError("sigma_hi2 must be >= sigma_lo2")
        cands = []
        for q in self.candidates:
            q = np.asarray(q, dtype=float)
            if q.shape != (d, d):
                raise ValueError(f"candidate matrix must be {d}x{d}, got {q.shape}")
            if np.max(np.abs(q - q.T)) > _SYM_TOL:
                raise ValueError("candidate matrix is not symmetric")
            q = 0.5 * (q + q.T)
            ev = np.linalg.eigvalsh(q)
            if ev.min() < lo - _EIG_TOL or ev.max() > hi + _EIG_TOL:
                raise ValueError(
                    "candidate eigenvalues outside [sigma_lo2, sigma_hi2]: "
                    f"{ev.min()}..{ev.max()} vs [{lo}, {hi}]"
                )
            cands.append(q)
        object.__setattr__(self, "candidates", tuple(cands))
        if d >= 2 and not cands:
            # allowed at construction; g_of and the solver will refuse
            pass

    def scenario_matrices(self) -> tuple[np.ndarray, ...]:
        """Finite scenario family: interval endpoints (as multiples of I) for
        d = 1 plus any explicit candidates; candidates only for d >= 2."""
        if self.dimension == 1:
            base = (
                np.array([[self.sigma_lo2]]),
                np.array([[self.sigma_hi2]]),
            )
            return base + self.candidates
        if not self.candidates:
            raise ValueError("uncertainty set with dimension >= 2 needs candidates")
        return self.candidates


def g_of(gamma: UncertaintySet, A) -> float:
    """Sublinear generator of the uncertainty set at a symmetric matrix A.

    d = 1: exactly (sigma_hi2 * max(a,0) + sigma_lo2 * min(a,0)) / 2.
    d >= 2: max over the candidate list of tr(A Q) / 2, a lower approximation
    of the supremum over the full set.
    """
    d = gamma.dimension
    A = np.asarray(A, dtype=float)
    if d == 1:
        if A.size != 1:
            raise ValueError(f"expected a scalar or 1x1 matrix, got shape {A.shape}")
        a = float(A.reshape(()))
        return 0.5 * (gamma.sigma_hi2 * max(a, 0.0) + gamma.sigma_lo2 * min(a, 0.0))
    if A.shape != (d, d):
        raise ValueError(f"dimension mismatch: expected {d}x{d}, got {A.shape}")
    if np.max(np.abs(A - A.T)) > _SYM_TOL * max(1.0, np.max(np.abs(A))):
        raise ValueError("matrix argument is not symmetric")
    if not gamma.candidates:
        raise ValueError("empty candidate list: generator undefined for d >= 2")
    best = -np.inf
    for q in gamma.candidates:
        val = 0.5 * float(np.sum(A * q))  # tr(A Q) for symmetric Q
        if val > best:
            best = val
    return best


def _expr_grid(entries, rows, cols, what):
    entries = tuple(tuple(row) for row in entries)
    if len(entries) != rows or any(len(r) != cols for r in entries):
        raise ValueError(f"{what} must be a {rows}x{cols} array of expressions")
    return entries


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Full problem data.

    b: n drift expressions in (x, u).
    h: d x d array of n-vectors of expressions in (x, u), symmetric in (i, j);
       couples the state to the quadratic variation of the driving noise.
    sigma: n x d diffusion expressions in (x, u).
    f: running-cost generator expression in (x, u, y, z).
    g: d x d quadratic-variation cost expressions in (x, u, y, z), symmetric.
    controls / gamma: the admissible control lattice and the uncertainty set.
    mu: dissipativity rate of f in y (> 0); estimated when absent.
    discount / psi: set when f was given in the discounted shorthand
       f = -discount * y + psi(x, u); required by the cost simulator.
    """

    n: int
    d: int
    m: int
    b: tuple
    h: tuple
    sigma: tuple
    f: Expression
    g: tuple
    controls: ControlSet
    gamma: UncertaintySet
    mu: Optional[float] = None
    discount: Optional[float] = None
    psi: Optional[Expression] = None

    def __post_init__(self):
        n, d, m = int(self.n), int(self.d), int(self.m)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "m", m)
        if n < 1 or d < 1 or m < 1:
            raise ValueError("dimensions n, d, m must all be >= 1")
        b = tuple(self.b)
        if len(b) != n:
            raise ValueError(f"b must have {n} components")
        object.__setattr__(self, "b", b)
        h = tuple(tuple(tuple(vec) for vec in row) for row in self.h)
        if len(h) != d or any(len(row) != d for row in h):
            raise ValueError(f"h must be a {d}x{d} array of {n}-vectors")
        for row in h:
            for vec in row:
                if len(vec) != n:
                    raise ValueError(f"each h entry must be an {n}-vector of expressions")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "sigma", _expr_grid(self.sigma, n, d, "sigma"))
        object.__setattr__(self, "g", _expr_grid(self.g, d, d, "g"))
        if self.controls.m != m:
            raise ValueError("control set dimension does not match m")
        if self.gamma.dimension != d:
            raise ValueError("uncertainty set dimension does not match d")
        if self.mu is not None and not (float(self.mu) > 0.0):
            raise ValueError("mu must be > 0 when supplied")
        if self.discount is not None and not (float(self.discount) > 0.0):
            raise ValueError("discount must be > 0 when supplied")

        dyn_vars = frozenset(state_var_names(n) + control_var_names(m))
        cost_vars = frozenset(cost_var_names(n, d, m))
        for e in b:
            _check_vars(e, dyn_vars, "b")
        for row in self.h:
            for vec in row:
                for e in vec:
                    _check_vars(e, dyn_vars, "h")
        for row in self.sigma:
            for e in row:
                _check_vars(e, dyn_vars, "sigma")
        _check_vars(self.f, cost_vars, "f")
        for row in self.g:
            for e in row:
                _check_vars(e, cost_vars, "g")
        if self.psi is not None:
            _check_vars(self.psi, dyn_vars, "psi")

        # structural symmetry of h and g (checked, not silently repaired)
        for i in range(d):
            for j in range(i + 1, d):
                if self.h[i][j] != self.h[j][i]:
                    raise ValueError(f"h[{i + 1}][{j + 1}] differs from h[{j + 1}][{i + 1}]")
                if self.g[i][j] != self.g[j][i]:
                    raise ValueError(f"g[{i + 1}][{j + 1}] differs from g[{j + 1}][{i + 1}]")

    def g_is_zero(self) -> bool:
        return all(e.is_zero() for row in self.g for e in row)

    def h_is_zero(self) -> bool:
        return all(e.is_zero() for row in self.h for vec in row for e in vec)

    def f_is_z_free(self) -> bool:
        znames = {f"z{j + 1}" for j in range(self.d)}
        return not (self.f.free_variables() & znames)

    def signature(self) -> str:
        """Stable text fingerprint of everything the generated kernels depend on."""
        parts = [f"n={self.n};d={self.d};m={self.m}"]
        parts.append("b:" + "|".join(str(e) for e in self.b))
        parts.append(
            "h:" + "|".join(str(e) for row in self.h for vec in row for e in vec)
        )
        parts.append("s:" + "|".join(str(e) for row in self.sigma for e in row))
        parts.append("f:" + str(self.f))
        parts.append("g:" + "|".join(str(e) for row in self.g for e in row))
        return "\n".join(parts)


def _check_vars(e: Expression, allowed: frozenset, what: str):
    extra = e.free_variables() - allowed
    if extra:
        raise ValueError(f"{what} references undeclared variable(s): {sorted(extra)}")


def spec_from_strings(
    n: int,
    d: int,
    m: int,
    b,
    sigma,
    controls: ControlSet,
    gamma: UncertaintySet,
    h=None,
    f: Optional[str] = None,
    g=None,
    psi: Optional[str] = None,
    discount: Optional[float] = None,
    mu: Optional[float] = None,
) -> ProblemSpec:
    """Build a ProblemSpec from expression strings. Either `f` or the
    discounted shorthand (`psi` with `discount`) must be given, not both."""
    dyn = state_var_names(n) + control_var_names(m)
    cost = cost_var_names(n, d, m)
    b_e = tuple(parse_expression(s, dyn) for s in b)
    sigma_e = tuple(tuple(parse_expression(s, dyn) for s in row) for row in sigma)
    if h is None:
        zero = Expression.constant(0.0)
        h_e = tuple(tuple((zero,) * n for _ in range(d)) for _ in range(d))
    else:
        h_e = tuple(
            tuple(tuple(parse_expression(s, dyn) for s in vec) for vec in row) for row in h
        )
    if g is None:
        zero = Expression.constant(0.0)
        g_e = tuple((zero,) * d for _ in range(d))
    else:
        g_e = tuple(tuple(parse_expression(s, cost) for s in row) for row in g)
    if (f is None) == (psi is None):
        raise ValueError("give exactly one of f or (psi, discount)")
    psi_e = None
    if psi is not None:
        if discount is None or not (float(discount) > 0.0):
            raise ValueError("the psi shorthand requires discount > 0")
        psi_e = parse_expression(psi, dyn)
        f_e = Expression(
            "+",
            args=(
                Expression("*", args=(Expression("neg", args=(Expression.constant(float(discount)),)), Expression.variable("y"))),
                psi_e,
            ),
        )
    else:
        f_e = parse_expression(f, cost)
    return ProblemSpec(
        n=n, d=d, m=m, b=b_e, h=h_e, sigma=sigma_e, f=f_e, g=g_e,
        controls=controls, gamma=gamma, mu=mu, discount=discount, psi=psi_e,
    )


@dataclass(frozen=True)
class SampleBox:
    """Sampling region for check_assumptions: a state box, an optional control
    box (defaults to the control set bounds), and value/gradient ranges for
    the cost arguments y and z."""

    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: Optional[np.ndarray] = None
    u_hi: Optional[np.ndarray] = None
    y_lo: float = -5.0
    y_hi: float = 5.0
    z_lo: float = -5.0
    z_hi: float = 5.0

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.x_lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.x_hi, dtype=float))
        object.__setattr__(self, "x_lo", lo)
        object.__setattr__(self, "x_hi", hi)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("sample box must be nondegenerate (x_lo < x_hi)")
        if self.y_lo >= self.y_hi or self.z_lo >= self.z_hi:
            raise ValueError("sample box must be nondegenerate (y and z ranges)")


@dataclass(frozen=True)
class AssumptionVerdict:
    passed: bool
    margin: float
    witness: dict


@dataclass(frozen=True)
class AssumptionReport:
    """Sampled estimates of the regularity/dissipativity constants and
    per-assumption verdicts. Estimates are extremal sampled difference
    quotients: evidence, not certificates. eta_bar_hat always equals
    eta_hat - (1 + sigma_hi2) * alpha1 * alpha2 computed from its own fields.
    """

    L: float
    alpha1: float
    alpha2: float
    mu_hat: float
    eta_hat: float
    eta_bar_hat: float
    verdicts: dict
    n_samples: int


def _eval_vec(exprs, bind) -> np.ndarray:
    return np.array([eval_expression(e, bind) for e in exprs])


def _eval_mat(rows, bind) -> np.ndarray:
    return np.array([[eval_expression(e, bind) for e in row] for row in rows])


def _bind(spec: ProblemSpec, x=None, u=None, y=None, z=None) -> dict:
    out = {}
    if x is not None:
        for k in range(spec.n):
            out[f"x{k + 1}"] = float(x[k])
    if u is not None:
        for k in range(spec.m):
            out[f"u{k + 1}"] = float(u[k])
    if y is not None:
        out["y"] = float(y)
    if z is not None:
        for k in range(spec.d):
            out[f"z{k + 1}"] = float(z[k])
    return out


def eval_drift(spec: ProblemSpec, x, u) -> np.ndarray:
    return _eval_vec(spec.b, _bind(spec, x, u))


def eval_sigma(spec: ProblemSpec, x, u) -> np.ndarray:
    return _eval_mat(spec.sigma, _bind(spec, x, u))


def eval_h(spec: ProblemSpec, x, u) -> np.ndarray:
    """All h vectors, shape (d, d, n)."""
    bind = _bind(spec, x, u)
    return np.array(
        [[[eval_expression(e, bind) for e in vec] for vec in row] for row in spec.h]
    )


def eval_f(spec: ProblemSpec, x, u, y, z) -> float:
    return eval_expression(spec.f, _bind(spec, x, u, y, z))


def eval_g(spec: ProblemSpec, x, u, y, z) -> np.ndarray:
    return _eval_mat(spec.g, _bind(spec, x, u, y, z))


def check_assumptions(
    spec: ProblemSpec,
    sample_box: SampleBox,
    n_samples: int = 200,
    rng_seed: int = 0,
) -> AssumptionReport:
    """Estimate the regularity and dissipativity constants by seeded sampling
    of difference quotients, and grade the structural assumptions.

    Verdict keys: 'symmetry' (h, g index symmetry, structural),
    'lipschitz_constants' (finite sampled L, alpha1, alpha2),
    'cost_dissipativity' (mu_hat > 0), 'state_dissipativity' (eta_hat > 0),
    'net_dissipativity_margin' (eta_bar_hat > 0). Deterministic per seed.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    if sample_box.x_lo.size != spec.n:
        raise ValueError("sample box state dimension does not match the problem")
    rng = np.random.default_rng(int(rng_seed))
    n, d, m = spec.n, spec.d, spec.m
    u_lo = sample_box.u_lo if sample_box.u_lo is not None else spec.controls.lower
    u_hi = sample_box.u_hi if sample_box.u_hi is not None else spec.controls.upper
    u_lo = np.atleast_1d(np.asarray(u_lo, dtype=float))
    u_hi = np.atleast_1d(np.asarray(u_hi, dtype=float))

    # all draws up front, in a fixed order, for determinism
    xs = rng.uniform(sample_box.x_lo, sample_box.x_hi, size=(n_samples, 2, n))
    us = rng.uniform(u_lo, u_hi, size=(n_samples, 2, m))
    ys = rng.uniform(sample_box.y_lo, sample_box.y_hi, size=(n_samples, 2))
    zs = rng.uniform(sample_box.z_lo, sample_box.z_hi, size=(n_samples, 2, d))

    L = 0.0
    alpha1 = 0.0
    alpha2 = 0.0
    mu_hat = np.inf
    eta_hat = np.inf
    wit_L: dict = {}
    wit_mu: dict = {}
    wit_eta: dict = {}
    eps = 1e-12

    for i in range(n_samples):
        x, x2 = xs[i, 0], xs[i, 1]
        u, u2 = us[i, 0], us[i, 1]
        y, y2 = ys[i, 0], ys[i, 1]
        z, z2 = zs[i, 0], zs[i, 1]
        dx = float(np.linalg.norm(x - x2))
        du = float(np.linalg.norm(u - u2))
        dy = abs(y - y2)
        dz = float(np.linalg.norm(z - z2))

        # Lipschitz line for b and h, both arguments varying
        if dx + du > eps:
            num = float(np.linalg.norm(eval_drift(spec, x, u) - eval_drift(spec, x2, u2)))
            hv = eval_h(spec, x, u) - eval_h(spec, x2, u2)
            num += float(np.sum(np.linalg.norm(hv, axis=-1)))
            q = num / (dx + du)
            if q > L:
                L, wit_L = q, {"term": "drift_h", "x": x.tolist(), "x2": x2.tolist(),
                               "u": u.tolist(), "u2": u2.tolist(), "quotient": q}

        # diffusion: state slope (alpha1, u frozen) and control slope (L, x frozen)
        if dx > eps:
            q = float(
                np.linalg.norm(eval_sigma(spec, x, u) - eval_sigma(spec, x2, u))
            ) / dx
            alpha1 = max(alpha1, q)
        if du > eps:
            q = float(
                np.linalg.norm(eval_sigma(spec, x, u) - eval_sigma(spec, x, u2))
            ) / du
            if q > L:
                L, wit_L = q, {"term": "sigma_control", "x": x.tolist(),
                               "u": u.tolist(), "u2": u2.tolist(), "quotient": q}

        # cost line: z slope (alpha2) and weighted (x, y, u) slope (L)
        if dz > eps:
            num = abs(eval_f(spec, x, u, y, z) - eval_f(spec, x, u, y, z2))
            num += float(np.sum(np.abs(eval_g(spec, x, u, y, z) - eval_g(spec, x, u, y, z2))))
            alpha2 = max(alpha2, num / dz)
        den = (1.0 + np.linalg.norm(x) + np.linalg.norm(x2)) * dx + dy + du
        if den > eps:
            num = abs(eval_f(spec, x, u, y, z) - eval_f(spec, x2, u2, y2, z))
            num += float(np.sum(np.abs(eval_g(spec, x, u, y, z) - eval_g(spec, x2, u2, y2, z))))
            q = num / den
            if q > L:
                L, wit_L = q, {"term": "cost", "x": x.tolist(), "x2": x2.tolist(),
                               "u": u.tolist(), "u2": u2.tolist(),
                               "y": float(y), "y2": float(y2), "quotient": q}

        # cost dissipativity in y: one-sided quotient
        if dy > eps:
            lhs = (eval_f(spec, x, u, y, z) - eval_f(spec, x, u, y2, z)) * (y - y2)
            gm = (eval_g(spec, x, u, y, z) - eval_g(spec, x, u, y2, z)) * (y - y2)
            lhs += 2.0 * g_of(spec.gamma, gm)
            q = -lhs / (dy * dy)
            if q < mu_hat:
                mu_hat = q
                wit_mu = {"x": x.tolist(), "u": u.tolist(), "y": float(y),
                          "y2": float(y2), "quotient": q}

        # state-flow dissipativity: same control at both points
        if dx > eps:
            ds = eval_sigma(spec, x, u) - eval_sigma(spec, x2, u)
            mat = ds.T @ ds
            hv = eval_h(spec, x, u) - eval_h(spec, x2, u)
            mat = mat + 2.0 * np.einsum("k,ijk->ij", x - x2, hv)
            bterm = float(np.dot(x - x2, eval_drift(spec, x, u) - eval_drift(spec, x2, u)))
            mat = mat + bterm * np.eye(d)
            q = -g_of(spec.gamma, 0.5 * (mat + mat.T)) / (dx * dx)
            if q < eta_hat:
                eta_hat = q
                wit_eta = {"x": x.tolist(), "x2": x2.tolist(), "u": u.tolist(),
                           "quotient": q}

    eta_bar_hat = eta_hat - (1.0 + spec.gamma.sigma_hi2) * alpha1 * alpha2

    sym_ok = True
    sym_wit: dict = {}
    for i in range(d):
        for j in range(i + 1, d):
            if spec.h[i][j] != spec.h[j][i] or spec.g[i][j] != spec.g[j][i]:
                sym_ok, sym_wit = False, {"i": i + 1, "j": j + 1}
    finite = all(np.isfinite(v) for v in (L, alpha1, alpha2, mu_hat, eta_hat))

    verdicts = {
        "symmetry": AssumptionVerdict(sym_ok, 0.0, sym_wit),
        "lipschitz_constants": AssumptionVerdict(
            finite, float(L), wit_L
        ),
        "cost_dissipativity": AssumptionVerdict(mu_hat > 0.0, float(mu_hat), wit_mu),
        "state_dissipativity": AssumptionVerdict(eta_hat > 0.0, float(eta_hat), wit_eta),
        "net_dissipativity_margin": AssumptionVerdict(
            eta_bar_hat > 0.0, float(eta_bar_hat), {}
        ),
    }
    return AssumptionReport(
        L=float(L),
        alpha1=float(alpha1),
        alpha2=float(alpha2),
        mu_hat=float(mu_hat),
        eta_hat=float(eta_hat),
        eta_bar_hat=float(eta_bar_hat),
        verdicts=verdicts,
        n_samples=int(n_samples),
    )
