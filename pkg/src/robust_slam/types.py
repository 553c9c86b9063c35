"""Value types shared by the simulator, the window solver and the loop backend."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose


@dataclass(frozen=True)
class KeyframeState:
    """Pose (world-from-body), velocity and IMU biases of one keyframe."""

    pose: Pose
    velocity: np.ndarray
    bias_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp: float = 0.0

    def with_pose(self, pose: Pose) -> KeyframeState:
        return replace(self, pose=pose)


@dataclass(frozen=True)
class FeatureObservation:
    frame_id: int
    feature_id: int
    uv: np.ndarray
    uv_right: np.ndarray | None = None

    @property
    def has_right(self) -> bool:
        return self.uv_right is not None


@dataclass(frozen=True)
class ImuPreintegration:
    """Relative-motion pseudo-measurement between keyframes k and k+1.

    Residual ordering everywhere is (dp, dv, dtheta).
    """

    dp: np.ndarray
    dv: np.ndarray
    dR: np.ndarray
    dt: float
    covariance: np.ndarray
    bias_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"preintegration interval must be positive, got {self.dt}")

    @property
    def sqrt_info(self) -> np.ndarray:
        """Upper factor L with L^T L = covariance^-1."""
        cached = self.__dict__.get("_sqrt_info")
        if cached is None:
            info = np.linalg.inv(self.covariance)
            info = 0.5 * (info + info.T)
            cached = np.linalg.cholesky(info).T
            object.__setattr__(self, "_sqrt_info", cached)
        return cached


@dataclass(frozen=True)
class LoopCandidate:
    """Loop-closure constraint ``m_from_k`` between current keyframe k and past keyframe m.

    ``is_true`` is simulator ground truth; solvers must not read it.
    """

    k: int
    m: int
    m_from_k: Pose
    covariance: np.ndarray
    landmark_ids: tuple
    is_true: bool | None = None
    align_rms: float = 0.0
