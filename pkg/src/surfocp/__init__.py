"""Parabolic optimal control with pointwise state constraints on moving spheres.

P1 finite elements on icospheres, dG(0) in time, a discrete adjoint and a
primal-dual active-set solver for nodal state constraints ``Y >= 0``.
"""

from .adjoint import AdjointTrajectory, MultiplierField, reduced_gradient, solve_adjoint
from .assembly import SurfaceAssembler, TimeGrid, assemble_lower_order, assemble_mass, assemble_stiffness
from .harness import ExperimentConfig, RateTable, emit_report, run_ocp_convergence, run_state_convergence
from .mesh import ReferenceMesh, build_icosphere, closest_point_lift, triangle_frame
from .motion import MotionSpec, coefficients
from .ocp import OcpOptions, OcpProblem, OcpSolution, evaluate_cost, kkt_residuals, multiplier_mass, solve_ocp
from .state import ControlTrajectory, ParabolicSystem, StateTrajectory, project_initial, solve_state

__version__ = "0.1.0"

__all__ = [
    "AdjointTrajectory", "ControlTrajectory", "ExperimentConfig", "MotionSpec", "MultiplierField",
    "OcpOptions", "OcpProblem", "OcpSolution", "ParabolicSystem", "RateTable", "ReferenceMesh",
    "StateTrajectory", "SurfaceAssembler", "TimeGrid", "assemble_lower_order", "assemble_mass",
    "assemble_stiffness", "build_icosphere", "closest_point_lift", "coefficients", "emit_report",
    "evaluate_cost", "kkt_residuals", "multiplier_mass", "project_initial", "reduced_gradient",
    "run_ocp_convergence", "run_state_convergence", "solve_adjoint", "solve_ocp", "solve_state",
    "triangle_frame",
]
