"""Phase-field fatigue fracture with Modified-Newton and constant-load-accumulation acceleration."""

from .constitutive import MaterialParams, SplitKind
from .mesh import CrackSpec, Mesh, RefinementSpec, generate_rect_mesh
from .postprocess import RunResult
from .solver import (
    DirichletBC,
    FatigueSolver,
    LoadProgram,
    NonConvergenceError,
    Problem,
    SolverConfig,
    run_fatigue,
)

__all__ = [
    "CrackSpec",
    "DirichletBC",
    "FatigueSolver",
    "LoadProgram",
    "MaterialParams",
    "Mesh",
    "NonConvergenceError",
    "Problem",
    "RefinementSpec",
    "RunResult",
    "SolverConfig",
    "SplitKind",
    "generate_rect_mesh",
    "run_fatigue",
]

__version__ = "0.1.0"
