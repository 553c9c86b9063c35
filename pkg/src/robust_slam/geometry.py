"""SO(3)/SE(3) helpers and rigid point-set alignment.

Poses are stored world-from-body: ``T.act(p_body)`` gives world coordinates and
``compose(A, B)`` applies ``B`` first, then ``A`` (ordinary 4x4 product ``A @ B``).
Quaternions are (w, x, y, z) with ``w >= 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_EIGEN_BRANCH = np.pi - 1e-3
LOG_DEGENERATE = np.pi - 1e-6


class DegenerateRotationError(ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


class AlignmentError(ValueError):
    """Point correspondences cannot determine a rigid transform."""


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def so3_exp(omega):
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    k = skew(omega)
    if theta < 1e-8:
        return np.eye(3) + k + 0.5 * k @ k
    return (np.eye(3) + np.sin(theta) / theta * k
            + (1.0 - np.cos(theta)) / theta**2 * k @ k)


def so3_log(R, allow_pi=False):
    """Rotation vector of ``R``.

    Raises DegenerateRotationError when the angle is within 1e-6 of pi unless
    ``allow_pi`` is set, in which case one of the two valid answers is returned.
    """
    R = np.asarray(R, dtype=float)
    s = 0.5 * vee(R - R.T)
    c = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    sin_theta = np.linalg.norm(s)
    theta = np.arctan2(sin_theta, c)
    if theta >= LOG_DEGENERATE and not allow_pi:
        raise DegenerateRotationError(f"rotation angle {theta:.9f} too close to pi")
    if theta > LOG_EIGEN_BRANCH:
        # R + R^T = 2 cos(theta) I + 2 (1 - cos(theta)) a a^T
        sym = 0.5 * (R + R.T) - c * np.eye(3)
        _, vecs = np.linalg.eigh(sym)
        axis = vecs[:, -1]
        if axis @ s < 0.0:
            axis = -axis
        return theta * axis
    if theta < 1e-8:
        return s
    return theta / sin_theta * s


def right_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    k = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * k + k @ k / 12.0
    coef = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * k + coef * k @ k


def skew_batch(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def so3_exp_batch(omega):
    """Vectorized :func:`so3_exp` over the leading axis."""
    omega = np.asarray(omega, dtype=float).reshape(-1, 3)
    theta = np.linalg.norm(omega, axis=1)
    K = skew_batch(omega)
    K2 = K @ K
    small = theta < 1e-8
    ts = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(ts) / ts)
    b = np.where(small, 0.5, (1.0 - np.cos(ts)) / ts**2)
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * K2


def so3_log_batch(R):
    """Vectorized :func:`so3_log`; rotations near pi fall back to the scalar path."""
    R = np.asarray(R, dtype=float).reshape(-1, 3, 3)
    s = 0.5 * np.stack([R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]], axis=1)
    c = np.clip(0.5 * (np.trace(R, axis1=1, axis2=2) - 1.0), -1.0, 1.0)
    sin_theta = np.linalg.norm(s, axis=1)
    theta = np.arctan2(sin_theta, c)
    small = theta < 1e-8
    f = np.where(small, 1.0, theta / np.where(small, 1.0, sin_theta))
    out = f[:, None] * s
    for i in np.nonzero(theta > LOG_EIGEN_BRANCH)[0]:
        out[i] = so3_log(R[i])
    return out


def right_jacobian_inv_batch(phi):
    phi = np.asarray(phi, dtype=float).reshape(-1, 3)
    theta = np.linalg.norm(phi, axis=1)
    K = skew_batch(phi)
    small = theta < 1e-6
    ts = np.where(small, 1.0, theta)
    coef = np.where(small, 1.0 / 12.0, 1.0 / ts**2 - (1.0 + np.cos(ts)) / (2.0 * ts * np.sin(ts)))
    return np.eye(3) + 0.5 * K + coef[:, None, None] * (K @ K)


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return canonical_quat(np.array(q))


def canonical_quat(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    return -q if q[0] < 0.0 else q


def quat_multiply(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


@dataclass(frozen=True)
class Twist:
    """Tangent vector of SE(3): rotation part (rad) and translation part (m)."""

    rotation: np.ndarray
    translation: np.ndarray

    def as_vector(self):
        return np.concatenate([self.rotation, self.translation])

    @classmethod
    def from_vector(cls, xi):
        xi = np.asarray(xi, dtype=float)
        return cls(xi[:3].copy(), xi[3:6].copy())


def _se3_v(omega):
    theta = np.linalg.norm(omega)
    k = skew(omega)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * k + k @ k / 6.0
    return (np.eye(3) + (1.0 - np.cos(theta)) / theta**2 * k
            + (theta - np.sin(theta)) / theta**3 * k @ k)


@dataclass(frozen=True)
class Pose:
    """Rigid transform stored as unit quaternion (w, x, y, z) + translation."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = canonical_quat(self.q)
        t = np.array(self.t, dtype=float).reshape(3)
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_rt(cls, R, t):
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls.from_rt(T[:3, :3], T[:3, 3])

    @classmethod
    def exp(cls, twist: Twist):
        R = so3_exp(twist.rotation)
        return cls.from_rt(R, _se3_v(np.asarray(twist.rotation, float)) @ twist.translation)

    @property
    def R(self):
        return quat_to_matrix(self.q)

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def log(self) -> Twist:
        omega = so3_log(self.R)
        return Twist(omega, np.linalg.solve(_se3_v(omega), self.t))

    def compose(self, other: Pose) -> Pose:
        return Pose(quat_multiply(self.q, other.q), self.R @ other.t + self.t)

    def __matmul__(self, other: Pose) -> Pose:
        return self.compose(other)

    def inverse(self) -> Pose:
        w, x, y, z = self.q
        Rt = self.R.T
        return Pose(np.array([w, -x, -y, -z]), -Rt @ self.t)

    def act(self, points):
        """Map body-frame points (..., 3) into the parent frame."""
        return np.asarray(points, dtype=float) @ self.R.T + self.t

    def angle_to(self, other: Pose) -> float:
        return float(np.linalg.norm(so3_log(self.R.T @ other.R, allow_pi=True)))


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def inverse(T: Pose) -> Pose:
    return T.inverse()


def relative(a: Pose, b: Pose) -> Pose:
    """``a_from_b`` for two world-from-body poses."""
    return a.inverse().compose(b)


def world_from_k(world_from_m: Pose, m_from_k: Pose) -> Pose:
    """Pose of frame k in the world given frame m's world pose and k relative to m."""
    return world_from_m.compose(m_from_k)


def m_from_k(world_from_m: Pose, world_from_k_: Pose) -> Pose:
    return relative(world_from_m, world_from_k_)


def rigid_align(src, dst, estimate_scale=False):
    """Least-squares transform with ``dst ~= s * R @ src + t`` (Umeyama).

    Returns ``(Pose(R, t), s, rms)`` where ``rms`` is the RMS point distance after
    alignment. ``s`` is 1 unless ``estimate_scale``.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise AlignmentError(f"mismatched point arrays {src.shape} vs {dst.shape}")
    n = src.shape[0]
    if n < 3:
        raise AlignmentError(f"need at least 3 correspondences, got {n}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    spread = np.linalg.svd(xs, compute_uv=False)
    if spread[0] < 1e-12 or spread[1] < 1e-9 * max(spread[0], 1.0):
        raise AlignmentError("source points are collinear or coincident")
    cov = xd.T @ xs / n
    U, d, Vt = np.linalg.svd(cov)
    if d[1] < 1e-12 * max(d[0], 1e-300):
        raise AlignmentError("degenerate cross-covariance")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0.0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    scale = 1.0
    if estimate_scale:
        var_s = (xs**2).sum() / n
        scale = float(np.trace(np.diag(d) @ S) / var_s)
    t = mu_d - scale * R @ mu_s
    resid = dst - (scale * src @ R.T + t)
    rms = float(np.sqrt((resid**2).sum(axis=1).mean()))
    return Pose.from_rt(R, t), scale, rms
