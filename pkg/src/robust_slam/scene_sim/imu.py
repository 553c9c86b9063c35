"""Direct synthesis of preintegrated IMU pseudo-measurements from ground-truth states."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import so3_exp
from ..types import ImuPreintegration

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time densities: accel (m/s^2/sqrt(Hz)), gyro (rad/s/sqrt(Hz)) and bias walks."""

    accel_density: float = 0.04
    gyro_density: float = 0.004
    accel_random_walk: float = 1e-3
    gyro_random_walk: float = 1e-4


def preintegration_covariance(dt, noise: ImuNoise):
    """9x9 covariance over (dp, dv, dtheta) with the bias random walk folded in."""
    qa = noise.accel_density**2
    qba = noise.accel_random_walk**2
    cov = np.zeros((9, 9))
    I = np.eye(3)
    cov[0:3, 0:3] = (qa * dt**3 / 3.0 + qba * dt**5 / 20.0) * I
    cov[0:3, 3:6] = cov[3:6, 0:3] = (qa * dt**2 / 2.0 + qba * dt**4 / 8.0) * I
    cov[3:6, 3:6] = (qa * dt + qba * dt**3 / 3.0) * I
    cov[6:9, 6:9] = (noise.gyro_density**2 * dt + noise.gyro_random_walk**2 * dt**3 / 3.0) * I
    return cov + 1e-14 * np.eye(9)


def true_deltas(state_k, state_k1, gravity=GRAVITY):
    """Body-frame motion between two states, as an ideal accelerometer/gyro would integrate it."""
    dt = state_k1.timestamp - state_k.timestamp
    Rk = state_k.pose.R
    g = np.asarray(gravity, dtype=float)
    dp = Rk.T @ (state_k1.pose.t - state_k.pose.t - state_k.velocity * dt - 0.5 * g * dt * dt)
    dv = Rk.T @ (state_k1.velocity - state_k.velocity - g * dt)
    dR = Rk.T @ state_k1.pose.R
    return dp, dv, dR, dt


def synthesize_preintegration(state_k, state_k1, gravity=GRAVITY, imu_noise=ImuNoise(), rng=None):
    """Preintegration between consecutive keyframes; noise is drawn only when ``rng`` is given."""
    dp, dv, dR, dt = true_deltas(state_k, state_k1, gravity)
    if not dt > 0.0:
        raise ValueError("keyframes must be strictly increasing in time")
    cov = preintegration_covariance(dt, imu_noise)
    if rng is not None:
        e = np.linalg.cholesky(cov) @ rng.standard_normal(9)
        dp = dp + e[0:3]
        dv = dv + e[3:6]
        dR = dR @ so3_exp(e[6:9])
    return ImuPreintegration(dp, dv, dR, dt, cov,
                             np.array(state_k.bias_accel, float), np.array(state_k.bias_gyro, float))
