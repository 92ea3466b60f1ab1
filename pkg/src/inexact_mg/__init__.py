"""Geometric multigrid with inexact coarsest-level solves.

A V-cycle solver for SPD finite-element systems whose coarsest level
may be solved inexactly (conjugate gradients under various stopping
rules) or exactly (dense Cholesky), together with analysis tools that
quantify how the coarsest-level accuracy perturbs the outer iteration,
and a command-line harness that reproduces the associated experiments.
"""

from .analysis import (
    NormConstants,
    coarse_error_to_fine,
    compute_norm_constants,
    estimate_coarse_error_gain,
    estimate_contraction_norm,
    estimate_residual_gain,
    residual_to_coarse_rhs,
    smoother_contraction_norm,
)
from .fem import Coefficient, MeshLevel, ProblemSpec, assemble_load, build_hierarchy
from .krylov import (
    CgCoarseSolver,
    StopRule,
    cg_solve,
    epsilon_from_target,
    gamma_from_tau,
    residual_bound,
)
from .linalg import (
    DenseCholesky,
    NotSpdError,
    SparseMatrix,
    a_inner,
    a_norm,
    cholesky_factor,
    cholesky_solve,
    lambda_min_spd,
    power_method_largest,
    spmv,
    spmv_transpose,
)
from .multigrid import (
    CoarseSolveReport,
    DivergenceError,
    ExactCholeskySolver,
    Hierarchy,
    SmootherSpec,
    VcycleTrace,
    reference_solution,
    run_lockstep,
    run_vcycles,
    vcycle,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # problems and hierarchies
    "Coefficient",
    "MeshLevel",
    "ProblemSpec",
    "assemble_load",
    "build_hierarchy",
    # linear algebra
    "DenseCholesky",
    "NotSpdError",
    "SparseMatrix",
    "a_inner",
    "a_norm",
    "cholesky_factor",
    "cholesky_solve",
    "lambda_min_spd",
    "power_method_largest",
    "spmv",
    "spmv_transpose",
    # the V-cycle and its drivers
    "CoarseSolveReport",
    "DivergenceError",
    "ExactCholeskySolver",
    "Hierarchy",
    "SmootherSpec",
    "VcycleTrace",
    "reference_solution",
    "run_lockstep",
    "run_vcycles",
    "vcycle",
    # coarse solvers and stopping rules
    "CgCoarseSolver",
    "StopRule",
    "cg_solve",
    "epsilon_from_target",
    "gamma_from_tau",
    "residual_bound",
    # perturbation analysis
    "NormConstants",
    "coarse_error_to_fine",
    "compute_norm_constants",
    "estimate_coarse_error_gain",
    "estimate_contraction_norm",
    "estimate_residual_gain",
    "residual_to_coarse_rhs",
    "smoother_contraction_norm",
]
