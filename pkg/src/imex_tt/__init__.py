"""Implicit-explicit tensor-train solver for kinetic equations with Fokker-Planck collisions."""

from .domain import Case, ConfigError, SimConfig, SpatialGrid, VelocityGrid, cfl_time_step, load_config
from .fokker_planck import TridiagonalMatrix, build_collision_tridiag, build_maxwellian, maxwellian_tt
from .integrator import Model, SimState, StepError, time_step
from .sylvester import Orientation, solve_matrix_sylvester, solve_tensor_sylvester
from .tt import Form, TensorTrain3

__all__ = [
    "Case",
    "ConfigError",
    "Form",
    "Model",
    "Orientation",
    "SimConfig",
    "SimState",
    "SpatialGrid",
    "StepError",
    "TensorTrain3",
    "TridiagonalMatrix",
    "VelocityGrid",
    "build_collision_tridiag",
    "build_maxwellian",
    "cfl_time_step",
    "load_config",
    "maxwellian_tt",
    "solve_matrix_sylvester",
    "solve_tensor_sylvester",
    "time_step",
]

__version__ = "0.1.0"
