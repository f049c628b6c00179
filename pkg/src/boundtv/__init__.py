"""Bound-constrained total-variation least squares by ADMM splitting."""

from .diagnostics import MetricsReport, evaluate, objective, stationarity_check
from .forward import (
    IdentityOperator,
    LinearOperator,
    MatrixOperator,
    UpliftGeometry,
    UpliftOperator,
    add_noise,
    make_blocky_model,
    uplift_adjoint,
    uplift_apply,
)
from .operators import Bounds, Grid, grad_adjoint, grad_forward, phi, project, shrink, tv_norm
from .solver import (
    SolveResult,
    SolverConfig,
    SolverDivergence,
    SolverState,
    admm_step,
    init_state,
    inner_cycle,
    naive_projected_solve,
    run,
    solve_m_subproblem,
    tikhonov_solve,
)

__all__ = [
    "MetricsReport",
    "evaluate",
    "objective",
    "stationarity_check",
    "IdentityOperator",
    "LinearOperator",
    "MatrixOperator",
    "UpliftGeometry",
    "UpliftOperator",
    "add_noise",
    "make_blocky_model",
    "uplift_adjoint",
    "uplift_apply",
    "Bounds",
    "Grid",
    "grad_adjoint",
    "grad_forward",
    "phi",
    "project",
    "shrink",
    "tv_norm",
    "SolveResult",
    "SolverConfig",
    "SolverDivergence",
    "SolverState",
    "admm_step",
    "init_state",
    "inner_cycle",
    "naive_projected_solve",
    "run",
    "solve_m_subproblem",
    "tikhonov_solve",
]

__version__ = "0.1.0"
