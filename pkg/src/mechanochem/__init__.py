"""Phase-field tumour growth with nutrient transport and linear elasticity (Q1 finite elements)."""

from .config import ConfigError, RunConfig, load_shipped, parse_config
from .grid import Grid, build_grid
from .materials import HypothesisError
from .steppers import FieldState, ModelParams, coupled_step, initial_state, run_simulation

__all__ = [
    "ConfigError",
    "FieldState",
    "Grid",
    "HypothesisError",
    "ModelParams",
    "RunConfig",
    "build_grid",
    "coupled_step",
    "initial_state",
    "load_shipped",
    "parse_config",
    "run_simulation",
]
__version__ = "0.1.0"
