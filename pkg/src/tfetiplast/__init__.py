"""Elastoplastic (J2, isotropic hardening) finite element solver on TFETI domain decomposition."""

from .driver import ElastoplasticProblem, FieldState, SolverConfig, run_time_loop
from .errors import TfetiPlastError
from .material import MaterialParams, consistent_tangent, return_mapping, stress_update
from .mesh import LoadProgram, Mesh, generate_box_mesh, generate_plate_with_hole, read_mesh, write_mesh
from .partition import partition

__all__ = [
    "ElastoplasticProblem",
    "FieldState",
    "LoadProgram",
    "MaterialParams",
    "Mesh",
    "SolverConfig",
    "TfetiPlastError",
    "consistent_tangent",
    "generate_box_mesh",
    "generate_plate_with_hole",
    "partition",
    "read_mesh",
    "return_mapping",
    "run_time_loop",
    "stress_update",
    "write_mesh",
]

__version__ = "0.1.0"
