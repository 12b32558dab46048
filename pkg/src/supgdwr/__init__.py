"""Goal-oriented space-time adaptivity for SUPG-stabilized
convection-diffusion-reaction problems."""
from .adaptivity import (AdaptivityConfig, ConvergenceReport, SolverFailure, adapt,
                         mark_space, mark_time, run_loop)
from .discretization import (FESpace, SpaceTimeFunction, SpaceTimeSlab, build_space,
                             restrict_to_primal, uniform_slabs)
from .dual import solve_dual
from .estimator import ErrorIndicators, estimate
from .mesh import Mesh, Rectangle, create_rectangle_mesh, refine, refine_uniform
from .primal import NO_STABILIZATION, StabilizationParams, solve_primal
from .problems import (GoalFunctional, ProblemData, effectivity, exact_goal_error,
                       goal_l2_error, rotating_hill)

__version__ = "0.1.0"

__all__ = [
    "AdaptivityConfig", "ConvergenceReport", "ErrorIndicators", "FESpace",
    "GoalFunctional", "Mesh", "NO_STABILIZATION", "ProblemData", "Rectangle",
    "SolverFailure", "SpaceTimeFunction", "SpaceTimeSlab", "StabilizationParams",
    "adapt", "build_space", "create_rectangle_mesh", "effectivity", "estimate",
    "exact_goal_error", "goal_l2_error", "mark_space", "mark_time", "refine",
    "refine_uniform", "restrict_to_primal", "rotating_hill", "run_loop",
    "solve_dual", "solve_primal", "uniform_slabs",
]
