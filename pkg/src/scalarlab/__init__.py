"""Numerical laboratory for passive scalars advected by rough incompressible fields on the torus."""
__version__ = "0.1.0"

from .grid import GridField, ShapeError
from .fields import (
    ClebschPotentials,
    SpectrumConfig,
    sample_clebsch_3d,
    sample_stream_2d,
    velocity_from_clebsch,
    velocity_from_stream,
)
from .solver import SolverConfig, ScalarState, initialize, solve
from .diagnostics import Verdict, epsilon_sweep, yaglom_average, structure_function_exponent
from .lagrangian import NoiseMode, SDEConfig, evolve_ensemble, richardson_verdict
from .sard import jet_grid, probe_for, box_count_curve, distance_to_low_rank
from .config import ExperimentConfig, ConfigError, parse_config

__all__ = [
    "ClebschPotentials",
    "ConfigError",
    "ExperimentConfig",
    "GridField",
    "NoiseMode",
    "SDEConfig",
    "ScalarState",
    "ShapeError",
    "SolverConfig",
    "SpectrumConfig",
    "Verdict",
    "box_count_curve",
    "distance_to_low_rank",
    "epsilon_sweep",
    "evolve_ensemble",
    "initialize",
    "jet_grid",
    "parse_config",
    "probe_for",
    "richardson_verdict",
    "sample_clebsch_3d",
    "sample_stream_2d",
    "solve",
    "structure_function_exponent",
    "velocity_from_clebsch",
    "velocity_from_stream",
    "yaglom_average",
]
