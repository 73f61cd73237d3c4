"""Quadrotor simulator and adaptive modified-RISE trajectory-tracking control."""

from .analysis import GainReport, MetricsRow, check_gains, lyapunov_surrogate, rms_metrics
from .config import Scenario, load_scenario, perturb_params
from .controller import Gains, LoopState, allocate, controller_step
from .dynamics import QuadState, state_derivative
from .harness import run_compare, run_sweep
from .integrator import RunLog, SimulationDiverged, simulate
from .params import ConfigError, DisturbanceSpec, PlantParams
from .trajectory import TrajectorySpec, reference_signal

__all__ = [
    "ConfigError", "DisturbanceSpec", "GainReport", "Gains", "LoopState", "MetricsRow",
    "PlantParams", "QuadState", "RunLog", "Scenario", "SimulationDiverged", "TrajectorySpec",
    "allocate", "check_gains", "controller_step", "load_scenario", "lyapunov_surrogate",
    "perturb_params", "reference_signal", "rms_metrics", "run_compare", "run_sweep", "simulate",
    "state_derivative",
]

__version__ = "0.1.0"
