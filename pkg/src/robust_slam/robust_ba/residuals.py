"""Residuals and analytic Jacobians for the sliding-window problem.

Perturbation conventions (shared with the solver's state update):
    position  p <- p + dp          (world frame)
    rotation  R <- R exp(dtheta)   (body frame)
    velocity  v <- v + dv
    inverse depth rho <- rho + drho
"""
from __future__ import annotations

import numpy as np

from ..geometry import right_jacobian_inv, right_jacobian_inv_batch, skew, skew_batch, so3_log, so3_log_batch

I3 = np.eye(3)


def _matvec(M, v):
    return (M * v[:, None, :]).sum(axis=2)


def reprojection_batch(Ri, pi, Ra, pa, m, rho, offset, obs, sigma, jacobians=True):
    """Whitened reprojection residuals (pred - obs)/sigma for E observations.

    Returns ``(r, depth, J)`` with r of shape (E, 2), the observing-camera depth, and,
    when requested, a dict of Jacobian blocks: ``p_i``, ``th_i``, ``p_a``, ``th_a``
    (each (E, 2, 3)) and ``rho`` (E, 2).
    """
    q = _matvec(Ra, m)
    pw = q / rho[:, None] + pa
    return reprojection_world(np.transpose(Ri, (0, 2, 1)), pi, pw, Ra, q, rho, offset, obs, sigma, jacobians)


def reprojection_world(RiT, pi, pw, Ra, q, rho, offset, obs, sigma, jacobians=True):
    """Core of :func:`reprojection_batch` on precomputed world points.

    ``pw`` is the landmark in the world frame, ``q = Ra m`` the anchor ray rotated into
    the world frame and ``RiT`` the transposed observing-frame rotations. ``Ra`` is
    only used for the Jacobians.
    """
    Pi = _matvec(RiT, pw - pi)
    z = Pi[:, 2]
    zs = np.where(np.abs(z) < 1e-12, 1e-12, z)
    pred = np.empty((len(z), 2))
    pred[:, 0] = (Pi[:, 0] - offset) / zs
    pred[:, 1] = Pi[:, 1] / zs
    r = (pred - obs) / sigma
    if not jacobians:
        return r, z, None
    # rows of d(pred)/d(Pc): (e_k - pred_k e_z) / (z sigma)
    a = (1.0 / (zs * sigma))[:, None]
    u, v = pred[:, 0:1], pred[:, 1:2]
    DRiT = np.stack([a * (RiT[:, 0, :] - u * RiT[:, 2, :]), a * (RiT[:, 1, :] - v * RiT[:, 2, :])], axis=1)
    Pc = Pi.copy()
    Pc[:, 0] -= offset
    # row @ skew(P) == cross(row, P); the anchor rotation enters as Ra exp(dtheta) (m / rho)
    J = {
        "p_i": -DRiT,
        "th_i": np.cross(_drows_identity(a, u, v), Pi[:, None, :]),
        "p_a": DRiT,
        "th_a": -np.cross(DRiT, (q / rho[:, None])[:, None, :]) @ Ra,
        "rho": -(DRiT * (q / (rho**2)[:, None])[:, None, :]).sum(axis=2),
    }
    return r, z, J


def _drows_identity(a, u, v):
    E = len(a)
    D = np.zeros((E, 2, 3))
    D[:, 0, 0] = a[:, 0]
    D[:, 1, 1] = a[:, 0]
    D[:, 0, 2] = -a[:, 0] * u[:, 0]
    D[:, 1, 2] = -a[:, 0] * v[:, 0]
    return D


def reprojection_residual(pose_i, pose_a, m_a, rho, obs_uv, sigma, offset=0.0):
    """Single-observation version of :func:`reprojection_batch`."""
    one = lambda x: np.asarray(x, dtype=float)[None]
    r, z, J = reprojection_batch(one(pose_i.R), one(pose_i.t), one(pose_a.R), one(pose_a.t),
                                 one(m_a), np.array([float(rho)]), np.array([float(offset)]),
                                 one(obs_uv), sigma)
    return r[0], {k: v[0] for k, v in J.items()}


def imu_residual_arrays(R0, p0, v0, R1, p1, v1, preint, gravity, whiten=True):
    """Array-level core of :func:`imu_residual`."""
    g = np.asarray(gravity, dtype=float)
    dt = preint.dt
    a_p = R0.T @ (p1 - p0 - v0 * dt - 0.5 * g * dt * dt)
    a_v = R0.T @ (v1 - v0 - g * dt)
    r_th = so3_log(preint.dR.T @ R0.T @ R1)
    r = np.concatenate([a_p - preint.dp, a_v - preint.dv, r_th])
    Jri = right_jacobian_inv(r_th)
    Z = np.zeros((3, 3))
    J = {
        "p0": np.vstack([-R0.T, Z, Z]),
        "th0": np.vstack([skew(a_p), skew(a_v), -Jri @ R1.T @ R0]),
        "v0": np.vstack([-R0.T * dt, -R0.T, Z]),
        "p1": np.vstack([R0.T, Z, Z]),
        "th1": np.vstack([Z, Z, Jri]),
        "v1": np.vstack([Z, R0.T, Z]),
    }
    if whiten:
        L = preint.sqrt_info
        r = L @ r
        J = {k: L @ v for k, v in J.items()}
    return r, J


def imu_residual_batch(R0, p0, v0, R1, p1, v1, dp, dv, dR, dt, L, gravity):
    """Whitened IMU residuals for P consecutive pairs at once.

    Returns ``(r, J0, J1)``: r is (P, 9); J0 and J1 are (P, 9, 9) blocks with respect
    to the (p, theta, v) perturbations of the first and second state.
    """
    g = np.asarray(gravity, dtype=float)
    R0T = np.transpose(R0, (0, 2, 1))
    dtc = dt[:, None]
    a_p = np.einsum("pij,pj->pi", R0T, p1 - p0 - v0 * dtc - 0.5 * g * dtc**2)
    a_v = np.einsum("pij,pj->pi", R0T, v1 - v0 - g * dtc)
    E = np.transpose(dR, (0, 2, 1)) @ R0T @ R1
    r_th = so3_log_batch(E)
    r = np.concatenate([a_p - dp, a_v - dv, r_th], axis=1)
    Jri = right_jacobian_inv_batch(r_th)
    P = len(dt)
    J0 = np.zeros((P, 9, 9))
    J1 = np.zeros((P, 9, 9))
    J0[:, 0:3, 0:3] = -R0T
    J0[:, 0:3, 3:6] = skew_batch(a_p)
    J0[:, 0:3, 6:9] = -R0T * dt[:, None, None]
    J0[:, 3:6, 3:6] = skew_batch(a_v)
    J0[:, 3:6, 6:9] = -R0T
    J0[:, 6:9, 3:6] = -Jri @ np.transpose(R1, (0, 2, 1)) @ R0
    J1[:, 0:3, 0:3] = R0T
    J1[:, 3:6, 6:9] = R0T
    J1[:, 6:9, 3:6] = Jri
    r = np.einsum("pij,pj->pi", L, r)
    return r, L @ J0, L @ J1


def imu_residual(state_k, state_k1, preint, gravity, whiten=True):
    """Residual (dp, dv, dtheta) between a preintegrated measurement and two states.

    Returns ``(r, J)`` where J maps the perturbation names ``p0, th0, v0, p1, th1, v1``
    to 9x3 blocks.
    """
    return imu_residual_arrays(state_k.pose.R, state_k.pose.t, np.asarray(state_k.velocity, float),
                               state_k1.pose.R, state_k1.pose.t, np.asarray(state_k1.velocity, float),
                               preint, gravity, whiten)


def state_difference(state, lin):
    """15-vector perturbation taking ``lin`` to ``state`` (p, theta, v, ba, bg)."""
    return np.concatenate([
        state.pose.t - lin.pose.t,
        so3_log(lin.pose.R.T @ state.pose.R),
        np.asarray(state.velocity) - np.asarray(lin.velocity),
        np.asarray(state.bias_accel) - np.asarray(lin.bias_accel),
        np.asarray(state.bias_gyro) - np.asarray(lin.bias_gyro),
    ])


def prior_residual(states, prior):
    """Linear prior ``r_p - H_p dx`` on the keyframes it constrains.

    ``states`` maps keyframe id to the current KeyframeState. Returns ``(r, J)``
    with J a list of (m, 15) blocks in the prior's keyframe order.
    """
    if not prior.keyframe_ids:
        return np.zeros(0), []
    dx, blocks = [], []
    for kid in prior.keyframe_ids:
        lin = prior.linearization[kid]
        d = state_difference(states[kid], lin)
        dx.append(d)
        T = np.eye(15)
        T[3:6, 3:6] = right_jacobian_inv(d[3:6])
        blocks.append(T)
    dx = np.concatenate(dx)
    r = prior.r - prior.H @ dx
    J = []
    for i, T in enumerate(blocks):
        J.append(-prior.H[:, 15 * i:15 * (i + 1)] @ T)
    return r, J
