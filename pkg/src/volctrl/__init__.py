"""Value functions and feedback controls for infinite-horizon stochastic
control problems whose volatility is known only up to eigenvalue bounds.

The pieces: problem descriptions built from expression strings (problem),
a monotone finite-difference solver for the stationary equation driven by
backward parabolic flow (solver), scenario-based Monte Carlo simulation of
the controlled paths (simulate), optimality cross-checks (verification),
and deterministic file formats plus a CLI (fileio, problemfile, cli).
"""

from ._kernels import CFLError, NumericalError
from .problem import (
    AssumptionReport,
    ControlSet,
    ProblemSpec,
    SampleBox,
    UncertaintySet,
    check_assumptions,
    eval_drift,
    eval_f,
    eval_g,
    eval_h,
    eval_sigma,
    g_of,
    spec_from_strings,
)
from .solver import (
    EvaluationPoint,
    Grid,
    SolveReport,
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
from .simulate import (
    ControlPolicy,
    DiscountedCostReport,
    FlowContractionResult,
    PathBundle,
    VolatilityPolicy,
    discounted_cost,
    exp_martingale_moment,
    flow_contraction_estimate,
    robust_expectation,
    simulate_gsde,
)
from .verification import (
    VerificationReport,
    example57_oracle,
    fit_growth_lipschitz,
    verify_control_residual,
)
from .problemfile import (
    LoadedProblem,
    MCSettings,
    ProblemFileError,
    SolverSettings,
    load_problem,
)
from .fileio import read_value_csv, write_paths_csv, write_record, write_value_csv

__version__ = "0.1.0"

__all__ = [
    "AssumptionReport",
    "CFLError",
    "ControlPolicy",
    "ControlSet",
    "DiscountedCostReport",
    "EvaluationPoint",
    "FlowContractionResult",
    "Grid",
    "LoadedProblem",
    "MCSettings",
    "NumericalError",
    "PathBundle",
    "ProblemFileError",
    "ProblemSpec",
    "SampleBox",
    "SolveReport",
    "SolverSettings",
    "UncertaintySet",
    "ValueField",
    "VerificationReport",
    "VolatilityPolicy",
    "admissible_dt",
    "backward_semigroup",
    "build_grid",
    "check_assumptions",
    "compute_H",
    "discounted_cost",
    "dpp_residual",
    "eval_drift",
    "eval_f",
    "eval_g",
    "eval_h",
    "eval_sigma",
    "example57_oracle",
    "exp_martingale_moment",
    "extract_policy",
    "fit_growth_lipschitz",
    "flow_contraction_estimate",
    "g_of",
    "hjbi_residual_at",
    "load_problem",
    "parabolic_step",
    "read_value_csv",
    "robust_expectation",
    "simulate_gsde",
    "solve_elliptic",
    "spec_from_strings",
    "verify_control_residual",
    "write_paths_csv",
    "write_record",
    "write_value_csv",
    "z_vector",
]
