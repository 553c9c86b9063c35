"""Six-DOF pose graph: relative-pose edges, vectorized residuals and a damped Gauss-Newton solver.

Poses are world-from-body; perturbations are ``t <- t + dt`` and ``R <- R exp(dtheta)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from ..geometry import Pose, right_jacobian_inv_batch, skew_batch, so3_exp_batch, so3_log_batch


@dataclass
class EdgeSet:
    """Relative-pose constraints ``a_from_b`` measured between keyframes ``a`` and ``b``."""

    a: np.ndarray
    b: np.ndarray
    t: np.ndarray          # (E, 3) measured translation of b in a
    R: np.ndarray          # (E, 3, 3) measured rotation of b in a
    L: np.ndarray          # (E, 6, 6) upper square-root information, L^T L = cov^-1

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, int), np.zeros(0, int), np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 6, 6)))

    @classmethod
    def build(cls, pairs, measurements, covariances):
        if not len(pairs):
            return cls.empty()
        a = np.array([p[0] for p in pairs], dtype=int)
        b = np.array([p[1] for p in pairs], dtype=int)
        t = np.array([m.t for m in measurements], dtype=float)
        R = np.array([m.R for m in measurements], dtype=float)
        L = np.array([sqrt_information(c) for c in covariances], dtype=float)
        return cls(a, b, t, R, L)

    def __len__(self):
        return len(self.a)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return EdgeSet(self.a[idx], self.b[idx], self.t[idx], self.R[idx], self.L[idx])

    @staticmethod
    def concat(*sets):
        return EdgeSet(*(np.concatenate([getattr(s, f) for s in sets]) for f in ("a", "b", "t", "R", "L")))


def sqrt_information(cov):
    info = np.linalg.inv(np.asarray(cov, dtype=float))
    info = 0.5 * (info + info.T)
    return np.linalg.cholesky(info).T


def local_covariance(sigma_t, sigma_r):
    return np.diag([sigma_t**2] * 3 + [sigma_r**2] * 3)


def edge_residuals(Rw, tw, edges: EdgeSet, jacobians=True):
    """Whitened residuals (E, 6) ``[R_a^T (t_b - t_a) - t_m ; log(R_m^T R_a^T R_b)]``.

    With ``jacobians`` also returns (E, 6, 6) blocks with respect to the (t, theta)
    perturbations of pose a and pose b.
    """
    Ra, Rb = Rw[edges.a], Rw[edges.b]
    RaT = np.transpose(Ra, (0, 2, 1))
    d = np.einsum("eij,ej->ei", RaT, tw[edges.b] - tw[edges.a])
    E = np.transpose(edges.R, (0, 2, 1)) @ RaT @ Rb
    er = so3_log_batch(E)
    r = np.concatenate([d - edges.t, er], axis=1)
    rw = np.einsum("eij,ej->ei", edges.L, r)
    if not jacobians:
        return rw, None, None
    n = len(edges)
    Ja = np.zeros((n, 6, 6))
    Jb = np.zeros((n, 6, 6))
    Jri = right_jacobian_inv_batch(er)
    Ja[:, :3, :3] = -RaT
    Ja[:, :3, 3:] = skew_batch(d)
    Ja[:, 3:, 3:] = -Jri @ np.transpose(Rb, (0, 2, 1)) @ Ra
    Jb[:, :3, :3] = RaT
    Jb[:, 3:, 3:] = Jri
    return rw, edges.L @ Ja, edges.L @ Jb


@dataclass
class GraphSolveReport:
    iterations: int = 0
    cost_start: float = 0.0
    cost_end: float = 0.0
    converged: bool = False
    step: float = 0.0


@dataclass
class GraphState:
    R: np.ndarray
    t: np.ndarray

    @classmethod
    def from_poses(cls, poses):
        return cls(np.array([p.R for p in poses]).reshape(len(poses), 3, 3),
                   np.array([p.t for p in poses], dtype=float).reshape(len(poses), 3))

    def poses(self):
        return [Pose.from_rt(R, t) for R, t in zip(self.R, self.t)]

    def retract(self, dx):
        d = dx.reshape(-1, 6)
        return GraphState(self.R @ so3_exp_batch(d[:, 3:]), self.t + d[:, :3])


class WeightedGraph:
    """Edges plus a per-edge residual scale ``s`` (cost term ``s^2 ||r||^2``).

    ``robust`` optionally maps squared whitened norms to (loss, sqrt IRLS weight)
    pairs; when given, the scale of those edges is recomputed at each linearization.
    """

    def __init__(self, n_poses, edges: EdgeSet, scale=None, robust=None, robust_mask=None):
        self.n = n_poses
        self.edges = edges
        self.scale = np.ones(len(edges)) if scale is None else np.asarray(scale, dtype=float)
        self.robust = robust
        self.robust_mask = np.zeros(len(edges), bool) if robust_mask is None else np.asarray(robust_mask, bool)
        self._pattern = None

    def terms(self, x: GraphState):
        r, _, _ = edge_residuals(x.R, x.t, self.edges, False)
        return np.einsum("ij,ij->i", r, r)

    def cost(self, x: GraphState):
        s2 = self.terms(x)
        c = self.scale**2 * s2
        if self.robust is not None and self.robust_mask.any():
            loss, _ = self.robust(s2[self.robust_mask])
            c[self.robust_mask] = loss
        return float(np.sum(c))

    def _indices(self):
        if self._pattern is None:
            e = self.edges
            cols = np.concatenate([6 * e.a[:, None] + np.arange(6), 6 * e.b[:, None] + np.arange(6)], axis=1)
            rows = np.broadcast_to(cols[:, :, None], (len(e), 12, 12)).ravel()
            cc = np.broadcast_to(cols[:, None, :], (len(e), 12, 12)).ravel()
            self._pattern = (cols, rows, cc)
        return self._pattern

    def normal_equations(self, x: GraphState):
        r, Ja, Jb = edge_residuals(x.R, x.t, self.edges, True)
        s = self.scale.copy()
        if self.robust is not None and self.robust_mask.any():
            s2 = np.einsum("ij,ij->i", r, r)
            _, sw = self.robust(s2[self.robust_mask])
            s[self.robust_mask] = sw
        J = np.concatenate([Ja, Jb], axis=2) * s[:, None, None]
        r = r * s[:, None]
        cols, rows, cc = self._indices()
        dim = 6 * self.n
        Hb = np.matmul(np.transpose(J, (0, 2, 1)), J)
        H = scipy.sparse.coo_matrix((Hb.ravel(), (rows, cc)), shape=(dim, dim)).tocsc()
        g = np.bincount(cols.ravel(), weights=np.einsum("eki,ek->ei", J, r).ravel(), minlength=dim)
        return H, g


def solve_graph(graph: WeightedGraph, x: GraphState, max_iterations=10, tol_x=1e-6, init_damping=1e-4,
                max_damping=1e8):
    """Levenberg-style damped Gauss-Newton with the first pose held fixed."""
    rep = GraphSolveReport()
    c = graph.cost(x)
    rep.cost_start = c
    mu = init_damping
    step = np.inf
    for _ in range(max_iterations):
        rep.iterations += 1
        H, g = graph.normal_equations(x)
        H = H[6:, 6:]
        g = g[6:]
        d = H.diagonal().copy()
        d[d <= 0.0] = 1e-9
        accepted = False
        while mu <= max_damping:
            A = (H + scipy.sparse.diags(mu * d)).tocsc()
            try:
                dx = scipy.sparse.linalg.spsolve(A, -g)
            except RuntimeError:
                mu *= 10.0
                continue
            if not np.all(np.isfinite(dx)):
                mu *= 10.0
                continue
            xt = x.retract(np.concatenate([np.zeros(6), dx]))
            ct = graph.cost(xt)
            if ct < c:
                x, c = xt, ct
                mu = max(mu / 10.0, 1e-12)
                accepted = True
                step = float(np.linalg.norm(dx))
                break
            mu *= 10.0
        if not accepted:
            step = 0.0
            break
        if step < tol_x:
            break
    rep.cost_end = c
    rep.step = step
    rep.converged = step < tol_x
    return x, rep
