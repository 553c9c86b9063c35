"""Loop-closure hypotheses: candidate world poses, clustering and the weight subproblem."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ..geometry import Pose


@dataclass
class Hypothesis:
    """A cluster of loop candidates that agree on where the group start keyframe lies."""

    group_id: int
    members: tuple
    weight: float = 1.0
    centroid: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rank: int = 0

    @property
    def size(self):
        return len(self.members)


def estimate_candidate_world_pose(m_from_k: Pose, world_from_m: Pose, k_from_i: Pose) -> Pose:
    """World pose of group start i implied by a loop k->m: ``world_from_m * m_from_k * k_from_i``."""
    return world_from_m.compose(m_from_k).compose(k_from_i)


def candidate_world_poses(candidates, poses, start):
    """Implied world pose of keyframe ``start`` for each candidate, using the current ``poses``."""
    out = []
    for c in candidates:
        k_from_i = poses[c.k].inverse().compose(poses[start])
        out.append(estimate_candidate_world_pose(c.m_from_k, poses[c.m], k_from_i))
    return out


def single_linkage(points, threshold):
    """Cluster labels of single-linkage clustering cut at ``threshold`` (Euclidean)."""
    pts = np.asarray(points, dtype=float).reshape(len(points), -1)
    n = len(pts)
    if n == 0:
        return np.zeros(0, dtype=int)
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    adj = csr_matrix(d <= threshold)
    _, labels = connected_components(adj, directed=False)
    # relabel by first appearance so the labelling is canonical
    order = {}
    return np.array([order.setdefault(l, len(order)) for l in labels], dtype=int)


def cluster_hypotheses(group_id, candidate_ids, world_poses, d_c=0.5, align_rms=None, max_hypotheses=2,
                       rotation_gate=None):
    """Cluster the candidates of one group by the translation of their implied start pose.

    Clusters are ranked by size, then by smaller mean alignment residual, then by
    their first candidate id; the top ``max_hypotheses`` are returned. With a
    ``rotation_gate`` (radians) two candidates are only linked when their implied
    orientations also agree within the gate.
    """
    candidate_ids = list(candidate_ids)
    if not candidate_ids:
        return []
    t = np.array([p.t for p in world_poses])
    if rotation_gate is None:
        labels = single_linkage(t, d_c)
    else:
        n = len(world_poses)
        link = np.linalg.norm(t[:, None] - t[None, :], axis=2) <= d_c
        for a in range(n):
            for b in range(a + 1, n):
                if link[a, b] and world_poses[a].angle_to(world_poses[b]) > rotation_gate:
                    link[a, b] = link[b, a] = False
        _, labels = connected_components(csr_matrix(link), directed=False)
    rms = np.zeros(len(candidate_ids)) if align_rms is None else np.asarray(align_rms, dtype=float)
    clusters = []
    for lab in np.unique(labels):
        idx = np.nonzero(labels == lab)[0]
        clusters.append((-len(idx), float(rms[idx].mean()), candidate_ids[idx[0]], idx))
    clusters.sort(key=lambda c: c[:3])
    out = []
    for rank, (_, _, _, idx) in enumerate(clusters[:max_hypotheses]):
        out.append(Hypothesis(group_id, tuple(candidate_ids[i] for i in idx), 1.0, t[idx].mean(axis=0), rank))
    return out


def hypothesis_objective(w0, w1, A0, A1, lam):
    """Weight part of the selective objective with ``A_h = R_h / |H_h|^2``."""
    return A0 * w0**2 + A1 * w1**2 + lam * (1.0 - w0 - w1) ** 2


def hypothesis_weight_update(R0, R1, n0, n1, lam=1.0):
    """Minimize ``(w0/n0)^2 R0 + (w1/n1)^2 R1 + lam (1 - w0 - w1)^2`` over [0, 1]^2.

    ``R1``/``n1`` may be None for a group with a single hypothesis, in which case
    ``w1`` is returned as None. The problem is a convex box QP; the minimum is taken
    over the stationary points of the interior, the four edges and the corners.
    """
    if not lam > 0.0:
        raise ValueError("lam must be > 0")
    A0 = R0 / float(n0) ** 2
    if R1 is None:
        return float(np.clip(lam / (A0 + lam), 0.0, 1.0)), None
    A1 = R1 / float(n1) ** 2
    cands = []
    M = np.array([[A0 + lam, lam], [lam, A1 + lam]])
    sol = np.linalg.lstsq(M, np.array([lam, lam]), rcond=None)[0]
    cands.append((float(sol[0]), float(sol[1])))

    def edge(A, fixed):
        # minimize A w^2 + lam (1 - fixed - w)^2 over w in [0, 1]
        return float(np.clip(lam * (1.0 - fixed) / (A + lam), 0.0, 1.0))

    for f in (0.0, 1.0):
        cands.append((f, edge(A1, f)))
        cands.append((edge(A0, f), f))
    best, fbest = None, np.inf
    for w0, w1 in cands:
        if not (0.0 <= w0 <= 1.0 and 0.0 <= w1 <= 1.0):
            continue
        f = hypothesis_objective(w0, w1, A0, A1, lam)
        if f < fbest - 1e-15:
            best, fbest = (w0, w1), f
    return best
