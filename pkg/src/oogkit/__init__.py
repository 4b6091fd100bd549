"""Object-centric imitation from a single demonstration: plans of contact graphs,
registration, trajectory warping, SE(3) action fitting and a kinematic simulator."""

from .errors import AlgorithmError, OOGError, ValidationError
from .geometry import PlaneModel, PointCloud, Pose
from .oog import OOG, compute_contacts, contact_set, match_oog
from .plangen import ManipulationPlan, PlanConfig, generate_plan
from .recording import Grip, HandObservation, Recording, load_recording, read_recording
from .registration import RegistrationParams, global_register
from .se3opt import OptimizerConfig, optimize_actions
from .sim import RolloutConfig, RolloutReport, Scenario, World, run_rollout, spawn_scenario
from .warp import WarpSpec, warp_trajectory

__version__ = "0.1.0"

__all__ = [
    "AlgorithmError", "OOGError", "ValidationError",
    "PlaneModel", "PointCloud", "Pose",
    "OOG", "compute_contacts", "contact_set", "match_oog",
    "ManipulationPlan", "PlanConfig", "generate_plan",
    "Grip", "HandObservation", "Recording", "load_recording", "read_recording",
    "RegistrationParams", "global_register",
    "OptimizerConfig", "optimize_actions",
    "RolloutConfig", "RolloutReport", "Scenario", "World", "run_rollout", "spawn_scenario",
    "WarpSpec", "warp_trajectory",
]
