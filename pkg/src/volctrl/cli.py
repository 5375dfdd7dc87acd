"""Command-line entry point.

Each subcommand reads one problem file (or the builtin benchmark name),
writes its numerical outputs as files under --out-dir, and keeps stderr for
diagnostics. Exit codes: 0 success, 2 input/validation error, 3 numerical
failure. Outputs are byte-identical across reruns with the same inputs, seed
and --threads value, and the numerical summaries do not depend on --threads.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

import click
import numpy as np

from ._kernels import CFLError, NumericalError
from .fileio import write_paths_csv, write_record, write_value_csv
from .problem import SampleBox, check_assumptions
from .problemfile import LoadedProblem, ProblemFileError, load_problem
from .simulate import (
    ControlPolicy,
    VolatilityPolicy,
    discounted_cost,
    simulate_gsde,
)
from .solver import build_grid, dpp_residual, extract_policy, solve_elliptic
from .verification import verify_control_residual

_MAX_CSV_PATHS = 200


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _note(message: str):
    click.echo(message, err=True)


def _load(problem: str, lam) -> LoadedProblem:
    try:
        return load_problem(problem, lam=lam)
    except ProblemFileError as e:
        _fail(2, str(e))


def _solve(lp: LoadedProblem, threads: int):
    grid = build_grid(lp.solver.bounds, lp.solver.counts)
    try:
        return solve_elliptic(lp.spec, grid, tol=lp.solver.tol, workers=threads)
    except (CFLError, NumericalError) as e:
        _fail(3, str(e))
    except ValueError as e:
        _fail(2, str(e))


def _mc_settings(lp: LoadedProblem, seed, need_cut: bool):
    if lp.mc is None:
        _fail(2, "the problem file has no [mc] section")
    mc = lp.mc
    if need_cut and mc.T_cut is None:
        _fail(2, "the [mc] section needs T_cut for cost estimates")
    if not need_cut and mc.T is None:
        _fail(2, "the [mc] section needs a simulation horizon T")
    return mc, (mc.seed if seed is None else int(seed))


def _common(fn):
    fn = click.option("--problem", required=True,
                      help="Problem file path, or a builtin name like example57.")(fn)
    fn = click.option("--lambda", "lam", type=float, default=None,
                      help="Discount rate for the builtin benchmark problem.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Override the [mc] seed from the problem file.")(fn)
    fn = click.option("--out-dir", default=None,
                      help="Output directory (default: $VOLCTRL_OUT_DIR or '.').")(fn)
    fn = click.option("--threads", type=click.IntRange(min=1), default=1,
                      help="Worker cap for the solver and path kernels.")(fn)
    return fn


def _outdir(out_dir) -> Path:
    p = Path(out_dir if out_dir is not None else os.environ.get("VOLCTRL_OUT_DIR", "."))
    p.mkdir(parents=True, exist_ok=True)
    return p


@click.group()
def main():
    """Robust control under volatility uncertainty: grid solver, path
    simulation, and cross-checks."""


@main.command()
@_common
def solve(problem, lam, seed, out_dir, threads):
    """Solve the stationary equation; write value.csv and solve.json."""
    lp = _load(problem, lam)
    out = _outdir(out_dir)
    field, report = _solve(lp, threads)
    policy = extract_policy(lp.spec, field)
    write_value_csv(out / "value.csv", field, policy)
    write_record(out / "solve.json", {
        "iterations": report.iterations,
        "dt": report.dt,
        "horizon": report.horizon,
        "rate": report.rate,
        "residual_norm": report.residual_norm,
        "converged": report.converged,
        "message": report.message,
        "change_history": list(report.change_history),
    })
    if not report.converged:
        _fail(3, f"solver did not converge: {report.message}")
    _note(f"solved in {report.iterations} steps; wrote {out / 'value.csv'}")


@main.command()
@_common
def simulate(problem, lam, seed, out_dir, threads):
    """Simulate worst-case feedback paths; write paths.csv and simulate.json."""
    lp = _load(problem, lam)
    mc, seed = _mc_settings(lp, seed, need_cut=False)
    out = _outdir(out_dir)
    field, _report = _solve(lp, threads)
    ctrl = ControlPolicy.from_field(lp.spec, field)
    vol = VolatilityPolicy.feedback(field)
    try:
        bundle = simulate_gsde(lp.spec, np.array(mc.x0), ctrl, vol, mc.dt, mc.T,
                               mc.n_paths, seed, workers=threads)
    except ValueError as e:
        _fail(2, str(e))
    write_paths_csv(out / "paths.csv", bundle, max_paths=_MAX_CSV_PATHS)
    xT = bundle.states[:, -1, :]
    se = np.std(xT, axis=0, ddof=1) / np.sqrt(bundle.n_paths) if bundle.n_paths > 1 \
        else np.zeros(xT.shape[1])
    write_record(out / "simulate.json", {
        "mean": [float(v) for v in np.mean(xT, axis=0)],
        "std_error": [float(v) for v in se],
        "n_paths": bundle.n_paths,
        "dt": bundle.dt,
        "scenario": "feedback",
        "T": bundle.T,
        "seed": bundle.seed,
        "n_flagged": bundle.n_flagged,
        "paths_in_csv": min(bundle.n_paths, _MAX_CSV_PATHS),
    })
    _note(f"simulated {bundle.n_paths} paths; wrote {out / 'paths.csv'}")


@main.command()
@_common
def cost(problem, lam, seed, out_dir, threads):
    """Robust discounted-cost estimate under the solved feedback control;
    write cost.json."""
    lp = _load(problem, lam)
    if lp.spec.psi is None:
        _fail(2, "cost estimates need the discounted form (psi with lambda)")
    mc, seed = _mc_settings(lp, seed, need_cut=True)
    out = _outdir(out_dir)
    field, _report = _solve(lp, threads)
    ctrl = ControlPolicy.from_field(lp.spec, field)
    family = [VolatilityPolicy.constant(q) for q in lp.spec.gamma.scenario_matrices()]
    try:
        rep = discounted_cost(lp.spec, np.array(mc.x0), ctrl, family, mc.dt,
                              mc.T_cut, mc.n_paths, seed, workers=threads)
    except ValueError as e:
        _fail(2, str(e))
    write_record(out / "cost.json", {
        "value": rep.value,
        "scenario": rep.scenario,
        "std_error": rep.std_error,
        "per_scenario": [[mean, se] for mean, se in rep.per_scenario],
        "tail_bound": rep.tail_bound,
        "n_flagged": rep.n_flagged,
        "n_paths": rep.n_paths,
        "dt": rep.dt,
        "t_cut": rep.t_cut,
        "x0": list(mc.x0),
        "seed": seed,
    })
    _note(f"robust cost {rep.value:.6g} (scenario {rep.scenario}); wrote {out / 'cost.json'}")


@main.command()
@_common
def verify(problem, lam, seed, out_dir, threads):
    """Solve, then check the extracted control's optimality residual;
    write verify.json."""
    lp = _load(problem, lam)
    out = _outdir(out_dir)
    field, report = _solve(lp, threads)
    ctrl = ControlPolicy.from_field(lp.spec, field)
    vr = verify_control_residual(lp.spec, field, ctrl,
                                 tolerance=5.0 * lp.solver.tol)
    record = vr.as_record()
    record["stopping_tol"] = lp.solver.tol
    write_record(out / "verify.json", record)
    _note(f"residual sup {vr.sup:.3g} over {vr.n_nodes} nodes "
          f"({'pass' if vr.passed else 'FAIL'}); wrote {out / 'verify.json'}")


@main.command()
@_common
def check(problem, lam, seed, out_dir, threads):
    """Sample the standing-assumption constants on the solver box;
    write check.json."""
    lp = _load(problem, lam)
    out = _outdir(out_dir)
    box = SampleBox(x_lo=[b[0] for b in lp.solver.bounds],
                    x_hi=[b[1] for b in lp.solver.bounds])
    rep = check_assumptions(lp.spec, box, n_samples=200,
                            rng_seed=0 if seed is None else int(seed))
    write_record(out / "check.json", {
        "L": rep.L,
        "alpha1": rep.alpha1,
        "alpha2": rep.alpha2,
        "mu_hat": rep.mu_hat,
        "eta_hat": rep.eta_hat,
        "eta_bar_hat": rep.eta_bar_hat,
        "n_samples": rep.n_samples,
        "verdicts": {
            name: {"passed": v.passed, "margin": v.margin}
            for name, v in rep.verdicts.items()
        },
    })
    bad = [name for name, v in rep.verdicts.items() if not v.passed]
    _note("assumptions sampled: " + ("all passed" if not bad else f"failed: {bad}")
          + f"; wrote {out / 'check.json'}")


@main.command()
@_common
@click.option("--s", "window", type=float, default=0.1, show_default=True,
              help="Length of the backward window the field is flowed over.")
def dpp(problem, lam, seed, out_dir, threads, window):
    """Solve, then measure the dynamic-programming self-consistency residual;
    write dpp.json."""
    lp = _load(problem, lam)
    out = _outdir(out_dir)
    field, report = _solve(lp, threads)
    try:
        resid = dpp_residual(lp.spec, field, window)
    except (CFLError, NumericalError) as e:
        _fail(3, str(e))
    threshold = 5.0 * lp.solver.tol
    write_record(out / "dpp.json", {
        "s": window,
        "residual": resid,
        "stopping_tol": lp.solver.tol,
        "threshold": threshold,
        "passed": bool(resid <= threshold),
    })
    _note(f"dpp residual {resid:.3g} over window {window}; wrote {out / 'dpp.json'}")


if __name__ == "__main__":
    main()
