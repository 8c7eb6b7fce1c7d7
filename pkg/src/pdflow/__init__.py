"""Projected primal-dual flows for time-varying convex programs.

Track the primal-dual optimizer trajectory of

    min_x f(x, t)   s.t.   g_i(x, t) <= 0

with continuous-time prediction-correction dynamics (asymptotic,
fixed-time or finite-time convergence), validated against an independent
sampled-time active-set oracle.
"""

from .problem import (
    DimensionMismatchError,
    DivergenceError,
    InfeasibleProblemError,
    NumericalDomainError,
    PrimalDualState,
    SingularMatrixError,
    TimeVaryingProblem,
    check_derivatives,
    eval_constraints,
    eval_objective,
    problem_from_functions,
)
from .lagrangian import EvalBundle, assemble_bundle, grad_x_lagrangian, lagrangian_value, lyapunov_value
from .saddle import (
    SaddleJacobian,
    SlackSchedule,
    regularized_schur,
    saddle_inverse,
    saddle_jacobian,
    schur_complement,
    slack_values,
)
from .flows import (
    FlowParams,
    augmentation_term,
    correction_asymptotic,
    correction_fixed_time,
    finite_time_bound,
    flow_eval,
    flow_rhs,
    prediction_term,
    project_velocity,
    settling_time_bound,
)
from .integrate import IntegratorConfig, Trajectory, detect_active_switches, integrate, step_once
from .oracle import (
    OracleSolution,
    OracleTrajectory,
    grid_search_minimizer,
    solve_at_time,
    solve_at_times,
    verify_kkt,
)
from .library import (
    DiskSpec,
    Scenario,
    ScenarioSpec,
    SetSpec,
    disks3_scenario,
    disks5_scenario,
    get_scenario,
    list_problems,
    parse_scenario,
    quad2d_problem,
    quad2d_scenario,
    rendezvous_problem,
)
from .diagnostics import (
    CheckReport,
    ComparisonReport,
    RunReport,
    compare_runtimes,
    read_trajectory_csv,
    run_checks,
    run_tracking,
    write_trajectory_csv,
)

__version__ = "0.1.0"
