"""Robust adaptive tube MPC with set-membership identification for quadrotors."""

from .config import ScenarioConfig, load, load_bundled
from .controller import ControllerConfig, solve_step
from .estimation import EstimatorState, update_theta_set
from .geometry import HPolytope, Hyperbox, build_contractive
from .model import ParametricSystem, QuadrotorParams, build_model
from .sim import RunLog, run_closed_loop
from .synthesis import SynthesisArtifacts, synthesize, validate_artifacts

__all__ = [
    "ControllerConfig",
    "EstimatorState",
    "HPolytope",
    "Hyperbox",
    "ParametricSystem",
    "QuadrotorParams",
    "RunLog",
    "ScenarioConfig",
    "SynthesisArtifacts",
    "build_contractive",
    "build_model",
    "load",
    "load_bundled",
    "run_closed_loop",
    "solve_step",
    "synthesize",
    "update_theta_set",
    "validate_artifacts",
]

__version__ = "0.1.0"
