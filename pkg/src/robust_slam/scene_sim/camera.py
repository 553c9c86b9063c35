"""Pinhole stereo camera producing normalized image coordinates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Pose
from ..types import FeatureObservation

DEFAULT_FOCAL_PX = 640.0


@dataclass(frozen=True)
class CameraModel:
    half_fov_x: float = np.pi / 4
    half_fov_y: float = float(np.arctan(0.75))
    max_range: float = 20.0
    sigma: float = 1.0 / DEFAULT_FOCAL_PX
    baseline: float = 0.12
    min_depth: float = 0.2

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError("camera noise sigma must be >= 0")
        if self.baseline < 0.0:
            raise ValueError("stereo baseline must be >= 0")

    @property
    def stereo(self) -> bool:
        return self.baseline > 0.0

    def in_view(self, points_cam):
        """Mask of camera-frame points inside the frustum and range."""
        p = np.atleast_2d(points_cam)
        z = p[:, 2]
        safe_z = np.where(z > 0.0, z, 1.0)
        return ((z > self.min_depth)
                & (np.linalg.norm(p, axis=1) <= self.max_range)
                & (np.abs(p[:, 0] / safe_z) <= np.tan(self.half_fov_x))
                & (np.abs(p[:, 1] / safe_z) <= np.tan(self.half_fov_y)))


def to_camera(pose: Pose, points_world):
    return (np.asarray(points_world, dtype=float) - pose.t) @ pose.R


def in_frustum(pose: Pose, points_world, camera: CameraModel):
    return camera.in_view(to_camera(pose, points_world))


def project_points(pose: Pose, ids, points_world, camera: CameraModel, rng=None, frame_id=0):
    """Vectorized observation of ``points_world`` (N, 3) with landmark ids ``ids``.

    Returns ``(ids, uv, uv_right)`` for visible points; ``uv_right`` rows are NaN
    when the right camera does not see the point (or the rig is mono).
    """
    ids = np.asarray(ids)
    pc = to_camera(pose, points_world)
    mask = camera.in_view(pc)
    pc = pc[mask]
    ids = ids[mask]
    uv = pc[:, :2] / pc[:, 2:3]
    right = np.full_like(uv, np.nan)
    if camera.stereo and len(pc):
        pr = pc - np.array([camera.baseline, 0.0, 0.0])
        rmask = camera.in_view(pr)
        right[rmask] = pr[rmask, :2] / pr[rmask, 2:3]
    if rng is not None and camera.sigma > 0.0 and len(pc):
        uv = uv + rng.normal(0.0, camera.sigma, uv.shape)
        right = right + rng.normal(0.0, camera.sigma, right.shape)
    return ids, uv, right


def observe(pose: Pose, time, landmarks, camera: CameraModel, rng=None, frame_id=0):
    """Observations of all landmarks visible from ``pose`` at ``time``.

    ``feature_id`` is the landmark id; track segmentation relabels it later.
    """
    if not landmarks:
        return []
    ids = np.array([lm.id for lm in landmarks])
    pts = np.array([lm.position(time) for lm in landmarks])
    ids, uv, right = project_points(pose, ids, pts, camera, rng)
    out = []
    for i, lid in enumerate(ids):
        r = None if np.isnan(right[i, 0]) else right[i].copy()
        out.append(FeatureObservation(frame_id, int(lid), uv[i].copy(), r))
    return out
