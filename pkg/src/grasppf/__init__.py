"""Reactive grasp tracking on depth streams.

Analytic scenes stand in for a real sensor and a learned quality network:
depth rendering, per-pixel directional grasp quality, a surface-projected
particle filter over grasp configurations, and a closed-loop episode
benchmark with scripted scene events.
"""

from . import camera, cli, filter, geom, gripper_quality, reach, scene, sim
from .camera import DEFAULT_INTRINSICS, Intrinsics, Observation, render
from .filter import Belief, FilterParams, NoCandidates, initial_distribution
from .filter import step as filter_step
from .geom import EulerZXY, Pose3
from .gripper_quality import (
    DEFAULT_GRIPPER,
    GraspConfig,
    GripperModel,
    SceneOracle,
    directional_quality_maps,
    evaluate_grasp,
)
from .reach import DEFAULT_REACH, ReachModel
from .scene import Scene, SceneEvent, SceneObject, load_events, load_scene
from .sim import EpisodeConfig, EpisodeResult, run_benchmark, run_episode

__version__ = "0.1.0"

__all__ = [
    "camera", "cli", "filter", "geom", "gripper_quality", "reach", "scene",
    "sim",
    "DEFAULT_GRIPPER", "DEFAULT_INTRINSICS", "DEFAULT_REACH",
    "Belief", "EpisodeConfig", "EpisodeResult", "EulerZXY", "FilterParams",
    "GraspConfig", "GripperModel", "Intrinsics", "NoCandidates",
    "Observation", "Pose3", "ReachModel", "Scene", "SceneEvent",
    "SceneObject", "SceneOracle",
    "directional_quality_maps", "evaluate_grasp", "filter_step",
    "initial_distribution", "load_events", "load_scene", "render",
    "run_benchmark", "run_episode",
]
