import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pose(rng, angle=np.pi * 0.9, scale=3.0):
    from robust_slam.geometry import Pose, so3_exp

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose.from_rt(so3_exp(axis * rng.uniform(0.0, angle)), rng.normal(scale=scale, size=3))
