"""Grid solver: stencil exactness, stepping semantics, stationary solve."""

import math

import numpy as np
import pytest

from volctrl.problem import ControlSet, UncertaintySet, spec_from_strings
from volctrl.solver import (
    CFLError,
    EvaluationPoint,
    Grid,
    NumericalError,
    ValueField,
    admissible_dt,
    backward_semigroup,
    build_grid,
    compute_H,
    dpp_residual,
    extract_policy,
    hjbi_residual_at,
    parabolic_step,
    solve_elliptic,
    z_vector,
)

GAMMA_57 = dict(dimension=1, sigma_lo2=0.5, sigma_hi2=1.0)


def make_benchmark(lam=1.0, u_hi=1.0):
    return spec_from_strings(
        n=1, d=1, m=1,
        b=["-x1 + u1"], sigma=[["x1 + u1"]],
        controls=ControlSet(lower=[0.0], upper=[u_hi]),
        gamma=UncertaintySet(**GAMMA_57),
        f=f"-{lam}*y + x1 - u1",
        mu=lam,
    )


def zero_problem(u_hi=1.0):
    return spec_from_strings(
        n=1, d=1, m=1,
        b=["0.0"], sigma=[["0.0"]],
        controls=ControlSet(lower=[0.0], upper=[u_hi]),
        gamma=UncertaintySet(**GAMMA_57),
        f="0.0",
        mu=1.0,
    )


def discount_problem(lam=2.0, extra=""):
    return spec_from_strings(
        n=1, d=1, m=1,
        b=["0.0"], sigma=[["0.0"]],
        controls=ControlSet(lower=[0.0], upper=[1.0]),
        gamma=UncertaintySet(**GAMMA_57),
        f=f"-{lam}*y{extra}",
        mu=lam,
    )


@pytest.fixture(scope="module")
def bench():
    return make_benchmark()


@pytest.fixture(scope="module")
def grid101():
    return build_grid([(-5.0, 5.0)], 101)


@pytest.fixture(scope="module")
def solved(bench, grid101):
    return solve_elliptic(bench, grid101, tol=1e-4)


# ---------------------------------------------------------------------------
# grids


def test_build_grid_spacing_and_counts():
    g = build_grid([(-5.0, 5.0)], 201)
    assert g.spacings[0] == pytest.approx(0.05, rel=1e-15)
    assert g.n == 1 and g.n_nodes == 201
    g2 = build_grid([(-1.0, 1.0), (-1.0, 1.0)], (11, 11))
    assert g2.n_nodes == 121
    assert g2.node_coords().shape == (121, 2)


def test_build_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        build_grid([(0.0, 0.0)], 11)
    with pytest.raises(ValueError):
        build_grid([(1.0, -1.0)], 11)
    with pytest.raises(ValueError):
        build_grid([(-1.0, 1.0)], 2)


def test_interior_mask_counts():
    assert build_grid([(-5.0, 5.0)], 201).interior_mask().sum() == 121
    assert build_grid([(-5.0, 5.0)], 401).interior_mask().sum() == 241
    g2 = build_grid([(-1.0, 1.0), (-1.0, 1.0)], (11, 11))
    assert g2.interior_mask().sum() == 49
    full = Grid(lowers=(-1.0,), uppers=(1.0,), counts=(11,), margin=0.0)
    assert full.interior_mask().all()


def test_value_field_validation(grid101):
    with pytest.raises(ValueError):
        ValueField(grid=grid101, values=np.full(101, np.nan))
    with pytest.raises(ValueError):
        ValueField(grid=grid101, values=np.zeros(100))
    with pytest.raises(ValueError):
        ValueField(grid=grid101, values=np.zeros(101), policy=np.zeros(5, dtype=np.int64))


# ---------------------------------------------------------------------------
# pointwise operator


def test_evaluation_point_requires_symmetric_hessian():
    with pytest.raises(ValueError):
        EvaluationPoint(x=[0.0, 0.0], v=0.0, p=[0.0, 0.0],
                        A=[[0.0, 1.0], [0.0, 0.0]], u=[0.0])


def test_z_vector(bench):
    z = z_vector(bench, x=[0.2], p=[2.0], u=[1.0])
    assert z.shape == (1,)
    assert z[0] == pytest.approx(2.4, rel=1e-15)


def test_compute_H_benchmark_zero_hessian(bench):
    pt = EvaluationPoint(x=[0.7], v=-0.15, p=[0.5], A=[[0.0]], u=[1.0])
    H = compute_H(bench, pt)
    assert H.shape == (1, 1) and H[0, 0] == 0.0


def test_compute_H_benchmark_unit_hessian(bench):
    pt = EvaluationPoint(x=[0.0], v=0.0, p=[0.3], A=[[1.0]], u=[1.0])
    H = compute_H(bench, pt)
    assert H[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_compute_H_constant_g_only():
    c = 0.7
    spec = spec_from_strings(
        n=1, d=2, m=1,
        b=["0.0"], sigma=[["0.0", "0.0"]],
        controls=ControlSet(lower=[0.0], upper=[1.0]),
        gamma=UncertaintySet(dimension=2, sigma_lo2=0.5, sigma_hi2=1.0,
                             candidates=(np.eye(2),)),
        f="-1.0*y",
        g=[[str(c), str(c)], [str(c), str(c)]],
        mu=1.0,
    )
    pt = EvaluationPoint(x=[0.4], v=1.0, p=[2.0], A=[[3.0]], u=[0.5])
    H = compute_H(spec, pt)
    assert np.array_equal(H, np.full((2, 2), 2.0 * c))
    assert np.array_equal(H, H.T)


def test_compute_H_dimension_mismatch(bench):
    pt = EvaluationPoint(x=[0.0, 0.0], v=0.0, p=[0.0, 0.0],
                         A=np.zeros((2, 2)), u=[1.0])
    with pytest.raises(ValueError):
        compute_H(bench, pt)


def test_hjbi_residual_benchmark_optimal_control(bench):
    x = 0.3
    r, u = hjbi_residual_at(bench, x=[x], v=(x - 1.0) / 2.0, p=[0.5], A=[[0.0]])
    assert abs(r) <= 1e-14
    assert u[0] == 1.0
    # the restricted control set singles out the suboptimal value (1-u)/2 at u=0
    restricted = make_benchmark(u_hi=0.0)
    r0, u0 = hjbi_residual_at(restricted, x=[x], v=(x - 1.0) / 2.0, p=[0.5], A=[[0.0]])
    assert r0 == pytest.approx(0.5, abs=1e-14)
    assert u0[0] == 0.0


def test_hjbi_residual_no_drift_term():
    spec = spec_from_strings(
        n=1, d=1, m=1,
        b=["0.0"], sigma=[["0.0"]],
        controls=ControlSet(lower=[0.0], upper=[1.0]),
        gamma=UncertaintySet(**GAMMA_57),
        f="-1.0*y + x1 - u1",
        mu=1.0,
    )
    r, u = hjbi_residual_at(spec, x=[1.0], v=0.0, p=[0.0], A=[[0.0]])
    assert r == 0.0 and u[0] == 1.0


def test_hjbi_residual_zero_problem_tie_break():
    spec = zero_problem()
    r, u = hjbi_residual_at(spec, x=[0.4], v=1.3, p=[2.0], A=[[1.0]])
    assert r == 0.0
    assert u[0] == 0.0  # lowest lattice index wins all ties


# ---------------------------------------------------------------------------
# stepping


def test_parabolic_step_refuses_large_dt(bench, grid101):
    adm = admissible_dt(bench, grid101)
    field = ValueField(grid=grid101, values=np.zeros(101))
    with pytest.raises(CFLError) as ei:
        parabolic_step(bench, field, 1.5 * adm)
    err = ei.value
    assert err.dt == pytest.approx(1.5 * adm, rel=1e-12)
    assert err.admissible == pytest.approx(adm, rel=1e-12)
    assert "admissible" in str(err)


def test_admissible_dt_benchmark_401(bench):
    g = build_grid([(-5.0, 5.0)], 401)
    assert admissible_dt(bench, g) == pytest.approx(1.5581447689618005e-05, rel=1e-9)


def test_parabolic_step_zero_problem_identity(grid101):
    spec = zero_problem()
    rng = np.random.default_rng(7)
    vals = rng.normal(size=101)
    out = parabolic_step(spec, ValueField(grid=grid101, values=vals), 0.01)
    assert np.array_equal(out.values, vals)


def test_parabolic_step_discount_factor(grid101):
    # dt chosen so both 2*dt and 1 - 2*dt are exact binary, making the
    # explicit Euler factor bitwise reproducible
    spec = discount_problem(lam=2.0)
    rng = np.random.default_rng(8)
    vals = rng.normal(size=101)
    out = parabolic_step(spec, ValueField(grid=grid101, values=vals), 0.25)
    assert np.array_equal(out.values, 0.5 * vals)


def test_parabolic_step_quadratic_diffusion_exact():
    # constant volatility, degenerate uncertainty interval: the interior
    # increment is exactly s0^2 * dt because the central second difference
    # of x^2 is exact and every quantity here is an exact binary float
    s0 = 0.5
    spec = spec_from_strings(
        n=1, d=1, m=1,
        b=["0.0"], sigma=[[str(s0)]],
        controls=ControlSet(lower=[0.0], upper=[1.0]),
        gamma=UncertaintySet(dimension=1, sigma_lo2=1.0, sigma_hi2=1.0),
        f="0.0",
        mu=1.0,
    )
    g = build_grid([(-1.0, 1.0)], 17)  # spacing 0.125, exact
    x = g.axes()[0]
    dt = 0.0078125  # 2^-7, below the stability bound 0.9*h^2/s0^2
    assert dt <= admissible_dt(spec, g)
    out = parabolic_step(spec, ValueField(grid=g, values=x * x), dt)
    inc = out.values - x * x
    inner = slice(1, -1)
    assert s0 * s0 * dt == 0.001953125
    assert np.array_equal(inc[inner], np.full(15, 0.001953125))
    assert inc[0] == 0.0 and inc[-1] == 0.0  # no one-sided diffusion at edges


def test_parabolic_step_refreshes_policy(bench, grid101):
    adm = admissible_dt(bench, grid101)
    out = parabolic_step(bench, ValueField(grid=grid101, values=np.zeros(101)), adm)
    # integrand x - u is minimized by the largest control at every node
    assert np.all(out.policy == bench.controls.points_per_axis - 1)


def test_backward_semigroup_zero_problem(grid101):
    spec = zero_problem()
    rng = np.random.default_rng(9)
    vals = rng.normal(size=101)
    out = backward_semigroup(spec, 0.5, ValueField(grid=grid101, values=vals), 0.01)
    assert np.array_equal(out.values, vals)


def test_backward_semigroup_discount_value(grid101):
    spec = discount_problem(lam=2.0)
    term = ValueField(grid=grid101, values=np.full(101, 3.0))
    out = backward_semigroup(spec, 1.0, term, 0.05)
    # frozen: 3 * (1 - 2*0.05)^20
    assert np.max(np.abs(out.values - 0.3647299637717081)) < 1e-12


def test_backward_semigroup_dt_must_divide(grid101):
    spec = discount_problem()
    term = ValueField(grid=grid101, values=np.zeros(101))
    with pytest.raises(ValueError):
        backward_semigroup(spec, 1.0, term, 0.3)
    with pytest.raises(ValueError):
        backward_semigroup(spec, -1.0, term, 0.1)


def test_semigroup_composition_bit_identical(bench, grid101):
    x = grid101.axes()[0]
    term = ValueField(grid=grid101, values=np.sin(x))
    dt = 1e-4
    whole = backward_semigroup(bench, 0.02, term, dt)
    part = backward_semigroup(bench, 0.012, term, dt)
    composed = backward_semigroup(bench, 0.008, part, dt)
    assert np.array_equal(whole.values, composed.values)


# ---------------------------------------------------------------------------
# order properties of the step


def test_monotonicity_fifty_pairs(bench, grid101):
    adm = admissible_dt(bench, grid101)
    x = grid101.axes()[0]
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(50):
        lo = rng.normal(size=101) + 0.3 * x * x * rng.uniform()
        hi = lo + np.abs(rng.normal(size=101))
        a = parabolic_step(bench, ValueField(grid=grid101, values=lo), adm)
        b = parabolic_step(bench, ValueField(grid=grid101, values=hi), adm)
        worst = max(worst, float(np.max(a.values - b.values)))
    assert worst <= 1e-12


def test_monotonicity_cross_terms():
    spec = spec_from_strings(
        n=2, d=2, m=1,
        b=["-x1", "-x2"], sigma=[["1.0", "0.6"], ["0.0", "0.8"]],
        controls=ControlSet(lower=[0.0], upper=[0.0]),
        gamma=UncertaintySet(dimension=2, sigma_lo2=0.25, sigma_hi2=1.0,
                             candidates=(np.eye(2), 0.5 * np.eye(2))),
        f="-1.0*y",
        mu=1.0,
    )
    g = build_grid([(-1.0, 1.0), (-1.0, 1.0)], (11, 11))
    adm = admissible_dt(spec, g)
    rng = np.random.default_rng(321)
    worst = 0.0
    for _ in range(15):
        lo = rng.normal(size=g.n_nodes)
        hi = lo + np.abs(rng.normal(size=g.n_nodes))
        a = parabolic_step(spec, ValueField(grid=g, values=lo), adm)
        b = parabolic_step(spec, ValueField(grid=g, values=hi), adm)
        worst = max(worst, float(np.max(a.values - b.values)))
    assert worst <= 1e-12


@pytest.mark.parametrize("maker,mu", [(lambda: discount_problem(2.0), 2.0),
                                      (make_benchmark, 1.0)])
def test_supnorm_contraction(maker, mu, grid101):
    spec = maker()
    adm = admissible_dt(spec, grid101)
    rng = np.random.default_rng(55)
    for dt in (0.49 * adm, 0.25 * adm, 0.1 * adm):
        for _ in range(5):
            phi = rng.normal(size=101) * 2.0
            psi = rng.normal(size=101) * 2.0
            a = parabolic_step(spec, ValueField(grid=grid101, values=phi), dt)
            b = parabolic_step(spec, ValueField(grid=grid101, values=psi), dt)
            lhs = np.max(np.abs(a.values - b.values))
            rhs = (1.0 - mu * dt / 2.0) * np.max(np.abs(phi - psi))
            assert lhs <= rhs + 1e-14


# ---------------------------------------------------------------------------
# stationary solve


def test_solve_benchmark_values(bench, grid101, solved):
    field, report = solved
    x = grid101.axes()[0]
    i0 = int(np.argmin(np.abs(x)))
    assert abs(field.values[i0] - (-0.5)) < 2e-2
    interior = grid101.interior_mask()
    assert np.max(np.abs(field.values[interior] - (x[interior] - 1.0) / 2.0)) < 2e-3
    assert report.converged and report.message == ""
    adm = admissible_dt(bench, grid101)
    assert report.dt == 1.0 / math.ceil(1.0 / adm)
    assert report.iterations == round(report.horizon / report.dt)
    assert report.residual_norm < 1e-3
    assert report.rate >= 0.8 * 1.0
    # change history decays monotonically after the burn-in, 10% slack
    hist = report.change_history
    assert all(hist[i + 1] <= 1.1 * hist[i] for i in range(2, len(hist) - 1))
    # policy refreshed on the way out: top lattice index on the interior
    assert np.all(field.policy[interior] == bench.controls.points_per_axis - 1)


def test_solve_constant_fixed_point(grid101):
    # no dissipativity rate supplied: the solver estimates it from samples
    spec = discount_problem(lam=2.0, extra=" + 3.0")
    assert spec.mu == 2.0
    spec_no_mu = spec_from_strings(
        n=1, d=1, m=1,
        b=["0.0"], sigma=[["0.0"]],
        controls=ControlSet(lower=[0.0], upper=[1.0]),
        gamma=UncertaintySet(**GAMMA_57),
        f="-2.0*y + 3.0",
    )
    field, report = solve_elliptic(spec_no_mu, grid101, tol=1e-8)
    assert report.converged
    assert np.max(np.abs(field.values - 1.5)) < 1e-6


def test_solve_zero_problem(grid101):
    field, report = solve_elliptic(zero_problem(), grid101, tol=1e-6)
    assert np.array_equal(field.values, np.zeros(101))
    assert report.converged and report.horizon == 1.0
    assert report.residual_norm == 0.0
    assert math.isnan(report.rate)


def test_solve_nonconvergence_reported(bench, grid101):
    field, report = solve_elliptic(bench, grid101, tol=1e-14, max_horizon=2.0)
    assert not report.converged
    assert "not converged" in report.message
    assert len(report.change_history) == 2
    assert np.all(np.isfinite(field.values))


def test_solve_initial_grid_mismatch(bench, grid101):
    other = build_grid([(-5.0, 5.0)], 51)
    init = ValueField(grid=other, values=np.zeros(51))
    with pytest.raises(ValueError):
        solve_elliptic(bench, grid101, tol=1e-3, initial=init)


def test_solve_growth_budget_enforced(bench, grid101):
    with pytest.raises(NumericalError):
        solve_elliptic(bench, grid101, tol=1e-3, growth_budget=0.01)


def test_solve_accepts_warm_start(bench, grid101, solved):
    field, _ = solved
    warm, report = solve_elliptic(bench, grid101, tol=1e-4, initial=field)
    assert report.converged
    assert report.horizon <= 2.0
    assert np.max(np.abs(warm.values - field.values)) < 1e-3


# ---------------------------------------------------------------------------
# policy extraction and the dynamic programming residual


def test_extract_policy_benchmark(bench, grid101, solved):
    field, _ = solved
    pol = extract_policy(bench, field)
    assert pol.shape == (101, 1)
    interior = grid101.interior_mask()
    assert np.all(pol[interior][:, 0] == 1.0)


def test_extract_policy_tie_break(grid101):
    spec = zero_problem()
    field = ValueField(grid=grid101, values=np.zeros(101))
    pol = extract_policy(spec, field)
    assert np.all(pol == 0.0)  # first lattice point everywhere


def test_extract_policy_quadratic_cost(grid101):
    spec = spec_from_strings(
        n=1, d=1, m=1,
        b=["0.0"], sigma=[["0.0"]],
        controls=ControlSet(lower=[0.0], upper=[1.0]),
        gamma=UncertaintySet(**GAMMA_57),
        f="-1.0*y + (u1 - 0.3)^2",
        mu=1.0,
    )
    field = ValueField(grid=grid101, values=np.zeros(101))
    pol = extract_policy(spec, field)
    assert np.all(pol == 0.3125)  # lattice point nearest 0.3 on [0,1] with 33 points
    stepped = parabolic_step(spec, field, 0.01)
    assert np.all(stepped.policy == 10)


def test_dpp_residual_solved_field(bench, solved):
    field, _ = solved
    assert dpp_residual(bench, field, 0.1) <= 3e-4


def test_dpp_residual_zero_problem(grid101):
    field = ValueField(grid=grid101, values=np.zeros(101))
    assert dpp_residual(zero_problem(), field, 0.1) == 0.0


def test_dpp_residual_detects_bump(bench, grid101, solved):
    field, _ = solved
    vals = field.values.copy()
    i0 = int(np.argmin(np.abs(grid101.axes()[0])))
    vals[i0] += 0.5
    bumped = ValueField(grid=grid101, values=vals)
    assert dpp_residual(bench, bumped, 0.1) >= 0.1


# ---------------------------------------------------------------------------
# consistency with the pointwise operator


def _integrand_errors(spec, bounds, counts, value_fn, grad_fn, hess_fn):
    errs = []
    for count in counts:
        g = build_grid([bounds], count)
        x = g.axes()[0]
        field = ValueField(grid=g, values=value_fn(x))
        dt = 0.5 * admissible_dt(spec, g)
        stepped = parabolic_step(spec, field, dt)
        integrand = (stepped.values - field.values) / dt
        interior = g.interior_mask()
        worst = 0.0
        for i in np.nonzero(interior)[0]:
            r, _ = hjbi_residual_at(spec, x=[x[i]], v=field.values[i],
                                    p=[grad_fn(x[i])], A=[[hess_fn(x[i])]])
            worst = max(worst, abs(integrand[i] - r))
        errs.append(worst)
    return errs


def _fit_order(errs, counts, bounds):
    hs = [(bounds[1] - bounds[0]) / (c - 1) for c in counts]
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


def test_consistency_first_order_with_drift(bench):
    counts = (81, 161, 321)
    errs = _integrand_errors(bench, (-2.0, 2.0), counts,
                             np.sin, math.cos, lambda t: -math.sin(t))
    assert errs[0] > errs[1] > errs[2]
    assert _fit_order(errs, counts, (-2.0, 2.0)) >= 0.9


def test_consistency_second_order_without_drift():
    # no drift: only the central stencils and the z wiring remain, so the
    # integrand converges at second order
    spec = spec_from_strings(
        n=1, d=1, m=1,
        b=["0.0"], sigma=[["0.5 + 0.1*x1"]],
        controls=ControlSet(lower=[0.0], upper=[0.0]),
        gamma=UncertaintySet(**GAMMA_57),
        f="-1.0*y + 0.2*z1 + x1",
        mu=1.0,
    )
    counts = (81, 161, 321)
    errs = _integrand_errors(spec, (-1.0, 1.0), counts,
                             np.sin, math.cos, lambda t: -math.sin(t))
    assert errs[0] > errs[1] > errs[2]
    assert _fit_order(errs, counts, (-1.0, 1.0)) >= 1.8


# ---------------------------------------------------------------------------
# horizon truncation decay


def test_horizon_truncation_decay_rate(bench, grid101):
    dt = 1.0 / math.ceil(1.0 / admissible_dt(bench, grid101))
    snapshots = {}
    field = ValueField(grid=grid101, values=np.zeros(101))
    for horizon in range(1, 7):
        field = backward_semigroup(bench, 1.0, field, dt)
        snapshots[horizon] = field.values.copy()
    interior = grid101.interior_mask()
    ts, diffs = [], []
    for t in (1, 2, 3):
        d = np.max(np.abs(snapshots[t][interior] - snapshots[2 * t][interior]))
        ts.append(t)
        diffs.append(d)
    rate = -np.polyfit(ts, np.log(diffs), 1)[0]
    assert rate >= 0.8 * 1.0


# ---------------------------------------------------------------------------
# multi-dimensional solve and refusal diagnostics


def test_solve_two_dimensional_linear_value():
    # V(x) = (x1 + x2)/2 solves the stationary equation for this data and,
    # being linear, is immune to the volatility uncertainty
    spec = spec_from_strings(
        n=2, d=2, m=1,
        b=["-x1", "-x2"], sigma=[["0.3", "0.1"], ["0.0", "0.3"]],
        controls=ControlSet(lower=[0.0], upper=[0.0]),
        gamma=UncertaintySet(dimension=2, sigma_lo2=0.25, sigma_hi2=1.0,
                             candidates=(np.eye(2), 0.5 * np.eye(2))),
        f="-1.0*y + x1 + x2",
        mu=1.0,
    )
    g = build_grid([(-1.0, 1.0), (-1.0, 1.0)], (21, 21))
    field, report = solve_elliptic(spec, g, tol=1e-5)
    assert report.converged
    X = g.node_coords()
    interior = g.interior_mask()
    expect = 0.5 * (X[:, 0] + X[:, 1])
    assert np.max(np.abs(field.values[interior] - expect[interior])) < 1e-3


def test_diagonal_dominance_refusal():
    spec = spec_from_strings(
        n=2, d=2, m=1,
        b=["0.0", "0.0"], sigma=[["1.0", "0.9"], ["0.0", "0.1"]],
        controls=ControlSet(lower=[0.0], upper=[0.0]),
        gamma=UncertaintySet(dimension=2, sigma_lo2=0.25, sigma_hi2=1.0,
                             candidates=(np.eye(2),)),
        f="-1.0*y",
        mu=1.0,
    )
    g = build_grid([(-1.0, 1.0), (-1.0, 1.0)], (11, 11))
    with pytest.raises(NumericalError, match="dominan"):
        admissible_dt(spec, g)


# ---------------------------------------------------------------------------
# worker independence


def test_step_independent_of_workers(bench, grid101):
    adm = admissible_dt(bench, grid101)
    rng = np.random.default_rng(77)
    vals = rng.normal(size=101)
    field = ValueField(grid=grid101, values=vals)
    one = parabolic_step(bench, field, adm, workers=1)
    four = parabolic_step(bench, field, adm, workers=4)
    assert np.array_equal(one.values, four.values)
    assert np.array_equal(one.policy, four.policy)


def test_solve_independent_of_workers(bench, grid101):
    a, _ = solve_elliptic(bench, grid101, tol=1e-3, max_horizon=2.0, workers=1)
    b, _ = solve_elliptic(bench, grid101, tol=1e-3, max_horizon=2.0, workers=3)
    assert np.array_equal(a.values, b.values)
