"""Loop-closure candidates from landmark-identity overlap (stands in for place recognition)."""
from __future__ import annotations

import numpy as np

from ..geometry import AlignmentError, rigid_align
from ..types import LoopCandidate
from .camera import to_camera


def detect_loop_candidates(visibility, min_shared=10, min_separation=10, max_matches=3):
    """Pairs (k, m, shared_ids) with m < k - min_separation sharing >= min_shared landmarks.

    ``visibility[f]`` is the set of landmark ids seen by keyframe f. Each k keeps its
    ``max_matches`` best m by overlap (ties broken toward older m).
    """
    n = len(visibility)
    if n == 0:
        return []
    ids = sorted(set().union(*visibility))
    col = {lid: i for i, lid in enumerate(ids)}
    V = np.zeros((n, len(ids)), dtype=np.int32)
    for f, vis in enumerate(visibility):
        V[f, [col[l] for l in vis]] = 1
    shared = V @ V.T
    out = []
    for k in range(n):
        hi = k - min_separation
        if hi <= 0:
            continue
        counts = shared[k, :hi]
        ok = np.nonzero(counts >= min_shared)[0]
        if len(ok) == 0:
            continue
        order = sorted(ok, key=lambda m: (-counts[m], m))[:max_matches]
        for m in sorted(order):
            out.append((k, int(m), tuple(sorted(visibility[k] & visibility[m]))))
    return out


def consistent_subset(points_m, points_k, tol=0.1):
    """Indices of the largest set of correspondences that look rigidly consistent.

    Two correspondences agree when their mutual distance is the same (within ``tol``)
    in both point sets. Starting from the correspondence with the most partners, the
    set is shrunk greedily until every pair inside it agrees; this plays the role of
    outlier rejection in a matcher and keeps a single rigid body's worth of points.
    """
    pm = np.asarray(points_m, dtype=float)
    pk = np.asarray(points_k, dtype=float)
    n = len(pm)
    if n == 0:
        return np.zeros(0, dtype=int)
    dm = np.linalg.norm(pm[:, None] - pm[None, :], axis=2)
    dk = np.linalg.norm(pk[:, None] - pk[None, :], axis=2)
    agree = np.abs(dm - dk) <= tol
    seed = int(np.argmax(agree.sum(axis=1)))
    keep = np.nonzero(agree[seed])[0]
    while len(keep):
        sub = agree[np.ix_(keep, keep)]
        bad = (~sub).sum(axis=1)
        if bad.max() == 0:
            break
        keep = np.delete(keep, int(np.argmax(bad)))
    return keep


def compute_loop_relative_pose(points_m, points_k, sigma_t=0.05, sigma_r=0.01):
    """``m_from_k`` from landmark positions as stored at m and as measured at k.

    Both inputs are (N, 3) camera-frame coordinates of the same landmarks.
    Returns ``(pose, covariance, rms)``; raises AlignmentError on degenerate input.
    """
    pose, _, rms = rigid_align(points_k, points_m)
    n = len(points_m)
    spread = np.sqrt(((points_k - points_k.mean(axis=0)) ** 2).sum(axis=1).mean())
    var_t = max(sigma_t**2, 4.0 * rms**2 / n)
    var_r = max(sigma_r**2, 4.0 * rms**2 / (n * max(spread, 1e-3) ** 2))
    cov = np.diag([var_t] * 3 + [var_r] * 3)
    return pose, cov, rms


def make_loop_candidates(sampled, landmarks, visibility, params, rng=None):
    """Detect candidates and attach relative poses and hidden truth labels."""
    by_id = {lm.id: lm for lm in landmarks}
    times = sampled.times
    out = []
    for k, m, shared in detect_loop_candidates(visibility, params.min_shared, params.min_separation,
                                               params.max_matches):
        if len(shared) < 3:
            continue
        xm = np.array([by_id[l].position(times[m]) for l in shared])
        xk = np.array([by_id[l].position(times[k]) for l in shared])
        pm = to_camera(sampled.states[m].pose, xm)
        pk = to_camera(sampled.states[k].pose, xk)
        if rng is not None and params.point_sigma > 0.0:
            pm = pm + rng.normal(0.0, params.point_sigma, pm.shape)
            pk = pk + rng.normal(0.0, params.point_sigma, pk.shape)
        inl = consistent_subset(pm, pk, params.inlier_tol)
        if len(inl) < 3:
            continue
        shared = tuple(shared[i] for i in inl)
        pm, pk, xm, xk = pm[inl], pk[inl], xm[inl], xk[inl]
        try:
            pose, cov, rms = compute_loop_relative_pose(pm, pk, params.sigma_t, params.sigma_r)
        except AlignmentError:
            continue
        moved = bool(np.any(np.linalg.norm(xk - xm, axis=1) > 1e-9))
        out.append(LoopCandidate(k, m, pose, cov, shared, not moved, rms))
    return out
