"""Cheap stand-in for a front-end: ground truth corrupted by accumulating relative-pose noise."""
from __future__ import annotations

import numpy as np

from ..geometry import Pose, so3_exp


def drifted_odometry(poses, sigma_t=0.005, sigma_r=0.001, seed=0):
    """Chain the ground-truth relative motions with Gaussian noise on each step.

    Noise is applied on the right of each relative pose (translation in metres,
    rotation in radians), so the error grows like a random walk along the path.
    The first pose is kept exact.
    """
    rng = np.random.default_rng(seed)
    out = [poses[0]]
    for a, b in zip(poses[:-1], poses[1:]):
        rel = a.inverse().compose(b)
        noise = Pose.from_rt(so3_exp(rng.normal(0.0, sigma_r, 3)), rng.normal(0.0, sigma_t, 3))
        out.append(out[-1].compose(rel).compose(noise))
    return out
