"""Synthetic dynamic-world generator: trajectories, landmarks, tracks, IMU and loop candidates."""
from .camera import CameraModel, in_frustum, observe, project_points
from .dataset import Dataset, DatasetError, generate_dataset, read_dataset, write_dataset
from .imu import GRAVITY, ImuNoise, preintegration_covariance, synthesize_preintegration
from .landmarks import Landmark, LandmarkKind, ScenarioValidationError, generate_landmarks
from .loops import compute_loop_relative_pose, detect_loop_candidates, make_loop_candidates
from .scenario import (LEVELS, LoopParams, Population, Scenario, ScenarioConfigError, load_scenario,
                       preset, scenario_from_dict, with_level)
from .tracks import SimTrack, track_features
from .trajectory import InvalidScenarioError, generate_trajectory, rotation_from_heading

__all__ = [
    "CameraModel", "Dataset", "DatasetError", "GRAVITY", "ImuNoise", "InvalidScenarioError", "LEVELS",
    "Landmark", "LandmarkKind", "LoopParams", "Population", "Scenario", "ScenarioConfigError",
    "ScenarioValidationError", "SimTrack", "compute_loop_relative_pose", "detect_loop_candidates",
    "generate_dataset", "generate_landmarks", "generate_trajectory", "in_frustum", "load_scenario",
    "make_loop_candidates", "observe", "preintegration_covariance", "preset", "project_points",
    "read_dataset", "rotation_from_heading", "scenario_from_dict", "synthesize_preintegration",
    "track_features", "with_level", "write_dataset",
]
