"""Optimal control of quasi-static phase-field fracture propagation."""

__version__ = "0.1.0"

from .experiments import ExperimentConfig, RunReport, build_problem, preset, run
from .forward import ForwardSolveError, Trajectory, solve_forward
from .mesh import BoundaryTag, Mesh, build_lshape_mesh, build_rectangle_mesh
from .model import (
    Control,
    ControlSpace,
    DesiredPhase,
    FractureControlProblem,
    FractureForms,
    ModelParams,
    TimeGrid,
)
from .optimize import HomotopyResult, SolveResult, newton_cg, run_homotopy
from .sensitivity import adjoint_sweep, hessian_sweep, tangent_sweep

__all__ = [
    "BoundaryTag",
    "Control",
    "ControlSpace",
    "DesiredPhase",
    "ExperimentConfig",
    "ForwardSolveError",
    "FractureControlProblem",
    "FractureForms",
    "HomotopyResult",
    "Mesh",
    "ModelParams",
    "RunReport",
    "SolveResult",
    "TimeGrid",
    "Trajectory",
    "adjoint_sweep",
    "build_lshape_mesh",
    "build_problem",
    "build_rectangle_mesh",
    "hessian_sweep",
    "newton_cg",
    "preset",
    "run",
    "run_homotopy",
    "solve_forward",
    "tangent_sweep",
]
