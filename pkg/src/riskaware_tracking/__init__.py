"""Risk-aware multi-robot target tracking.

A team of robots with heterogeneous, failure-prone sensors tracks mobile
targets with a Kalman filter. Each step an optimization-based controller
trades current tracking quality against exposure to the targets' risk
fields, weighted by how many spare sensors the team still has.
"""

from .config import ScenarioConfig, load_config, loads_config
from .controller import ControllerConfig, assemble_nlp, solve_step
from .estimation import Estimate, predict, update
from .observability import (ConfigurationError, gramian, minimal_sensor_matrix, sensing_margin,
                            sog, trace_inv_sog)
from .optimizer import NlpProblem, SolverOptions, check_gradients, solve
from .sensing import SensorLibrary
from .simulation import run_ablation, run_delta_sweep, run_scenario

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ControllerConfig", "Estimate", "NlpProblem", "ScenarioConfig",
    "SensorLibrary", "SolverOptions", "assemble_nlp", "check_gradients", "gramian", "load_config",
    "loads_config", "minimal_sensor_matrix", "predict", "run_ablation", "run_delta_sweep",
    "run_scenario", "sensing_margin", "solve", "solve_step", "sog", "trace_inv_sog", "update",
]
