"""Sliding-window visual-inertial bundle adjustment with per-feature robust weights.

State per keyframe (15): position, rotation perturbation, velocity, accel bias, gyro bias.
Each participating feature adds one inverse-depth variable in its anchor keyframe.
The oldest keyframe's pose is held fixed to remove the gauge freedom.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from ..geometry import Pose, right_jacobian_inv_batch, so3_exp_batch, so3_log_batch
from ..types import FeatureObservation, ImuPreintegration, KeyframeState
from .params import SolverParams
from .residuals import _matvec, imu_residual_batch, reprojection_world
from .weights import huber, huber_sqrt_weight, optimal_weight_momentum

log = logging.getLogger(__name__)

NX = 15


class SolverDivergedError(RuntimeError):
    pass


@dataclass
class FeatureTrack:
    """A tracked feature: anchor keyframe, inverse depth there, and its observations."""

    feature_id: int
    anchor: int
    anchor_uv: np.ndarray
    inv_depth: float | None = None
    observations: dict = field(default_factory=dict)
    weight: float = 1.0
    prev_weight: float = 1.0
    n_opt: int = 0
    residual: float = 0.0

    def add(self, obs: FeatureObservation):
        self.observations[obs.frame_id] = obs

    def observed_in(self, kids):
        return [k for k in kids if k in self.observations]


@dataclass
class MarginalizationPrior:
    """Linear factor ``|r - H dx|^2`` on the stacked 15-dim states of ``keyframe_ids``."""

    keyframe_ids: list
    linearization: dict
    H: np.ndarray
    r: np.ndarray

    @property
    def dim(self):
        return NX * len(self.keyframe_ids)


@dataclass
class SolveReport:
    objectives: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    alternations: int = 0
    inner_iterations: int = 0
    converged: bool = False
    n_features: int = 0
    n_invalid: int = 0


@dataclass
class SlidingWindow:
    capacity: int
    gravity: np.ndarray
    baseline: float = 0.0
    keyframe_ids: list = field(default_factory=list)
    states: dict = field(default_factory=dict)
    preintegrations: dict = field(default_factory=dict)
    tracks: dict = field(default_factory=dict)
    prior: MarginalizationPrior | None = None

    def __len__(self):
        return len(self.keyframe_ids)

    @property
    def full(self):
        return len(self.keyframe_ids) >= self.capacity

    def add_keyframe(self, kid, state: KeyframeState, preint_from_prev: ImuPreintegration | None = None):
        if self.keyframe_ids:
            if preint_from_prev is None:
                raise ValueError(f"keyframe {kid}: missing preintegration from {self.keyframe_ids[-1]}")
            self.preintegrations[self.keyframe_ids[-1]] = preint_from_prev
        self.keyframe_ids.append(kid)
        self.states[kid] = state

    def add_observations(self, kid, observations, min_disparity=1e-3):
        for obs in observations:
            tr = self.tracks.get(obs.feature_id)
            if tr is None:
                tr = FeatureTrack(obs.feature_id, kid, np.asarray(obs.uv, float))
                tr.inv_depth = stereo_inverse_depth(obs, self.baseline, min_disparity)
                self.tracks[obs.feature_id] = tr
            tr.add(obs)

    def active_tracks(self):
        kids = self.keyframe_ids
        return [t for t in self.tracks.values()
                if t.inv_depth is not None and t.anchor in self.states and len(t.observed_in(kids)) >= 2]

    def triangulate_missing(self, min_parallax=np.deg2rad(1.0)):
        """Give tracks without a stereo depth a two-view midpoint estimate."""
        kids = self.keyframe_ids
        for t in self.tracks.values():
            if t.inv_depth is not None:
                continue
            seen = t.observed_in(kids)
            if len(seen) < 2 or t.anchor not in self.states:
                continue
            t.inv_depth = triangulate_inverse_depth(self.states[t.anchor].pose, t.anchor_uv,
                                                    self.states[seen[-1]].pose,
                                                    t.observations[seen[-1]].uv, min_parallax)


def stereo_inverse_depth(obs: FeatureObservation, baseline, min_disparity=1e-3):
    if not obs.has_right or baseline <= 0.0:
        return None
    disparity = float(obs.uv[0] - obs.uv_right[0])
    if disparity < min_disparity:
        return None
    return disparity / baseline


def triangulate_inverse_depth(pose_a: Pose, uv_a, pose_b: Pose, uv_b, min_parallax=0.0):
    """Midpoint of closest approach of two bearing rays; inverse depth in the anchor frame."""
    da = pose_a.R @ np.array([uv_a[0], uv_a[1], 1.0])
    db = pose_b.R @ np.array([uv_b[0], uv_b[1], 1.0])
    cosang = da @ db / (np.linalg.norm(da) * np.linalg.norm(db))
    if np.arccos(np.clip(cosang, -1.0, 1.0)) < min_parallax:
        return None
    A = np.stack([da, -db], axis=1)
    sol, *_ = np.linalg.lstsq(A, pose_b.t - pose_a.t, rcond=None)
    if sol[0] <= 0.0 or sol[1] <= 0.0:
        return None
    return 1.0 / sol[0]


# ---------------------------------------------------------------------------
# Linearized problem over a set of keyframes, features and factors.


class _Problem:
    def __init__(self, win: SlidingWindow, params: SolverParams, tracks, imu_pairs, use_prior=True,
                 fix_first=True):
        self.win, self.params = win, params
        self.kids = list(win.keyframe_ids)
        self.kidx = {k: i for i, k in enumerate(self.kids)}
        self.nk = len(self.kids)
        self.np_ = NX * self.nk
        self.tracks = list(tracks)
        self.nt = len(self.tracks)
        self.dim = self.np_ + self.nt
        self.prior = win.prior if use_prior else None
        self.robust = params.robust
        self._build_inertial(imu_pairs)
        self._build_entries()
        self.free = np.ones(self.dim, dtype=bool)
        self.free_slice = slice(0, self.dim)
        if fix_first:
            self.free[0:6] = False
            self.free_slice = slice(6, self.dim)

    # -- state <-> arrays
    def pack(self):
        st = [self.win.states[k] for k in self.kids]
        x = {
            "R": np.array([s.pose.R for s in st]).reshape(self.nk, 3, 3),
            "p": np.array([s.pose.t for s in st], dtype=float).reshape(self.nk, 3),
            "v": np.array([s.velocity for s in st], dtype=float).reshape(self.nk, 3),
            "ba": np.array([s.bias_accel for s in st], dtype=float).reshape(self.nk, 3),
            "bg": np.array([s.bias_gyro for s in st], dtype=float).reshape(self.nk, 3),
            "rho": np.array([t.inv_depth for t in self.tracks], dtype=float),
        }
        return x

    def unpack(self, x):
        for i, k in enumerate(self.kids):
            old = self.win.states[k]
            self.win.states[k] = KeyframeState(Pose.from_rt(x["R"][i], x["p"][i]), x["v"][i].copy(),
                                               x["ba"][i].copy(), x["bg"][i].copy(), old.timestamp)
        for j, t in enumerate(self.tracks):
            t.inv_depth = float(x["rho"][j])

    def retract(self, x, dx):
        d = np.zeros(self.dim)
        d[self.free] = dx
        blk = d[:self.np_].reshape(self.nk, NX)
        R = x["R"] @ so3_exp_batch(blk[:, 3:6])
        return {"R": R, "p": x["p"] + blk[:, 0:3], "v": x["v"] + blk[:, 6:9], "ba": x["ba"] + blk[:, 9:12],
                "bg": x["bg"] + blk[:, 12:15], "rho": x["rho"] + d[self.np_:]}

    # -- inertial, bias and prior factors (dense over keyframe columns)
    def _build_inertial(self, imu_pairs):
        sc = self.params.residual_scale
        self.pi = np.array([self.kidx[k] for k in imu_pairs], dtype=int)
        pre = [self.win.preintegrations[k] for k in imu_pairs]
        P = len(pre)
        self.pre_dp = np.array([q.dp for q in pre], dtype=float).reshape(P, 3)
        self.pre_dv = np.array([q.dv for q in pre], dtype=float).reshape(P, 3)
        self.pre_dR = np.array([q.dR for q in pre], dtype=float).reshape(P, 3, 3)
        self.pre_dt = np.array([q.dt for q in pre], dtype=float)
        self.pre_L = np.array([q.sqrt_info for q in pre], dtype=float).reshape(P, 9, 9) / sc
        bw = np.concatenate([np.full(3, self.params.bias_walk[0]), np.full(3, self.params.bias_walk[1])])
        self.bias_inv = 1.0 / (bw[None, :] * np.sqrt(self.pre_dt)[:, None] * sc)
        if self.prior is not None:
            self.prior_idx = np.array([self.kidx[k] for k in self.prior.keyframe_ids], dtype=int)
            lin = [self.prior.linearization[k] for k in self.prior.keyframe_ids]
            self.prior_R = np.array([s.pose.R for s in lin])
            self.prior_x = np.array([np.concatenate([s.pose.t, np.zeros(3), s.velocity, s.bias_accel,
                                                     s.bias_gyro]) for s in lin], dtype=float)

    def inertial(self, x, jacobians=True):
        """IMU and bias-walk residuals per consecutive keyframe pair.

        Returns ``(r, J)`` with r of shape (P, 15) (9 inertial rows then 6 bias rows) and
        J of shape (P, 15, 30) over the contiguous columns of both keyframes.
        """
        i0, i1 = self.pi, self.pi + 1
        r, J0, J1 = imu_residual_batch(x["R"][i0], x["p"][i0], x["v"][i0], x["R"][i1], x["p"][i1],
                                       x["v"][i1], self.pre_dp, self.pre_dv, self.pre_dR, self.pre_dt,
                                       self.pre_L, self.win.gravity)
        rb = self.bias_inv * np.concatenate([x["ba"][i1] - x["ba"][i0], x["bg"][i1] - x["bg"][i0]], axis=1)
        r = np.concatenate([r, rb], axis=1)
        if not jacobians:
            return r, None
        P = len(i0)
        J = np.zeros((P, 15, 2 * NX))
        J[:, :9, 0:9] = J0
        J[:, :9, NX:NX + 9] = J1
        k = np.arange(6)
        J[:, 9 + k, 9 + k] = -self.bias_inv
        J[:, 9 + k, NX + 9 + k] = self.bias_inv
        return r, J

    def prior_factor(self, x, jacobians=True):
        """Marginalization prior residual and its (columns, Jacobian) block."""
        pr = self.prior
        idx = self.prior_idx
        th = so3_log_batch(np.transpose(self.prior_R, (0, 2, 1)) @ x["R"][idx])
        cur = np.concatenate([x["p"][idx], th, x["v"][idx], x["ba"][idx], x["bg"][idx]], axis=1)
        r = pr.r - pr.H @ (cur - self.prior_x).ravel()
        if not jacobians:
            return r, None
        Jr = right_jacobian_inv_batch(th)
        B = -pr.H.copy()
        for n in range(len(idx)):
            c = NX * n + 3
            B[:, c:c + 3] = B[:, c:c + 3] @ Jr[n]
        cols = (NX * idx[:, None] + np.arange(NX)).ravel()
        if np.all(np.diff(idx) == 1):
            cols = slice(int(cols[0]), int(cols[-1]) + 1)
        return r, (cols, B)

    def dense(self, x, jacobians=True):
        """Residuals of the non-visual factors and, optionally, their Jacobian blocks.

        Blocks are ``(row0, row1, [(columns, matrix), ...])`` over keyframe columns.
        """
        rows, factors = [], []
        if len(self.pi):
            r, J = self.inertial(x, jacobians)
            rows.append(r.ravel())
            if jacobians:
                for n, i in enumerate(self.pi):
                    factors.append((15 * n, 15 * n + 15, [(slice(NX * i, NX * i + 2 * NX), J[n])]))
        if self.prior is not None:
            r0 = sum(len(q) for q in rows)
            r, blk = self.prior_factor(x, jacobians)
            rows.append(r)
            if jacobians:
                factors.append((r0, r0 + len(r), [blk]))
        r = np.concatenate(rows) if rows else np.zeros(0)
        return r, factors

    # -- visual entries
    def _build_entries(self):
        ti, fi, ai, off, obs, stereo = [], [], [], [], [], []
        b = self.win.baseline
        for j, t in enumerate(self.tracks):
            a = self.kidx[t.anchor]
            for kf, o in t.observations.items():
                i = self.kidx.get(kf)
                if i is None:
                    continue
                if i != a:
                    ti.append(j); fi.append(i); ai.append(a); off.append(0.0); obs.append(o.uv); stereo.append(False)
                if o.uv_right is not None and b > 0.0:
                    ti.append(j); fi.append(i); ai.append(a); off.append(b); obs.append(o.uv_right)
                    stereo.append(i == a)
        self.e_track = np.array(ti, dtype=int)
        self.e_frame = np.array(fi, dtype=int)
        self.e_anchor = np.array(ai, dtype=int)
        self.e_off = np.array(off, dtype=float)
        self.e_obs = np.array(obs, dtype=float).reshape(-1, 2)
        self.e_stereo = np.array(stereo, dtype=bool)
        self.m = np.ones((self.nt, 3))
        if self.nt:
            self.m[:, :2] = np.array([t.anchor_uv for t in self.tracks])
        self.t_anchor = np.array([self.kidx[t.anchor] for t in self.tracks], dtype=int)
        self._pattern = None
        self._layout = None

    def restrict_entries(self, keep):
        for name in ("e_track", "e_frame", "e_anchor", "e_off", "e_obs", "e_stereo"):
            setattr(self, name, getattr(self, name)[keep])
        self._pattern = None
        self._layout = None

    def _columns(self):
        if self._pattern is None:
            cols = np.concatenate([NX * self.e_frame[:, None] + np.arange(6), NX * self.e_anchor[:, None] + np.arange(6),
                                   (self.np_ + self.e_track)[:, None]], axis=1)
            self._pattern = (cols, (cols[:, :, None] * self.dim + cols[:, None, :]).ravel())
        return self._pattern

    def _visual_layout(self):
        """Flat positions of the compressed pose Jacobian, its columns in the full state and
        the row-to-track incidence matrix."""
        if self._layout is None:
            E = len(self.e_track)
            nc = 6 * self.nk
            rows = 2 * np.arange(E)[:, None, None] + np.arange(2)[None, :, None]
            jcols = np.concatenate([6 * self.e_frame[:, None] + np.arange(6),
                                    6 * self.e_anchor[:, None] + np.arange(6)], axis=1)
            put = (rows * nc + jcols[:, None, :]).ravel()
            vcols = np.concatenate([(NX * np.arange(self.nk)[:, None] + np.arange(6)).ravel(),
                                    self.np_ + np.arange(self.nt)])
            S = scipy.sparse.csr_matrix((np.ones(2 * E), (np.repeat(self.e_track, 2), np.arange(2 * E))),
                                        shape=(self.nt, 2 * E))
            self._layout = (put, vcols, S)
        return self._layout

    def visual(self, x, jacobians):
        # world points per track, then gathered per observation
        ta = self.t_anchor
        q = _matvec(x["R"][ta], self.m)
        pw = q / x["rho"][:, None] + x["p"][ta]
        e, f = self.e_track, self.e_frame
        RT = np.transpose(x["R"], (0, 2, 1))
        return reprojection_world(RT[f], x["p"][f], pw[e], x["R"][self.e_anchor] if jacobians else None, q[e],
                                  x["rho"][e], self.e_off, self.e_obs,
                                  self.params.obs_sigma * self.params.residual_scale, jacobians)

    def visual_jacobian(self, x, w):
        """Row-scaled residuals (E, 2) and Jacobian values (E, 2, 13) over ``_columns``."""
        r, _, J = self.visual(x, True)
        s = self.visual_row_scale(r, w)
        V = np.concatenate([J["p_i"], J["th_i"], J["p_a"], J["th_a"], J["rho"][:, :, None]], axis=2)
        V[self.e_stereo, :, :12] = 0.0
        V *= s[:, None, None]
        return r * s[:, None], V

    def per_track_residual(self, r):
        s = np.einsum("ij,ij->i", r, r)
        wmask = ~self.e_stereo
        return np.bincount(self.e_track[wmask], weights=s[wmask], minlength=self.nt)

    # -- objective
    def visual_row_scale(self, r, w):
        if self.robust:
            return np.where(self.e_stereo, 1.0, w[self.e_track])
        k2 = self.params.residual_scale ** 2
        return huber_sqrt_weight(k2 * np.einsum("ij,ij->i", r, r), self.params.huber_delta)

    def cost(self, x, w, min_depth=1e-6):
        if np.any(x["rho"] <= 0.0):
            return np.inf
        r, z, _ = self.visual(x, False)
        if np.any(z <= min_depth):
            return np.inf
        rd, _ = self.dense(x, False)
        c = float(rd @ rd)
        s2 = np.einsum("ij,ij->i", r, r)
        if self.robust:
            c += float(np.sum(np.where(self.e_stereo, 1.0, w[self.e_track] ** 2) * s2))
        else:
            k2 = self.params.residual_scale ** 2
            c += float(np.sum(huber(k2 * s2, self.params.huber_delta))) / k2
        return c

    def weight_regularizer(self, w):
        if not self.robust or self.nt == 0:
            return 0.0
        p = self.params
        n = np.array([t.n_opt for t in self.tracks], dtype=float)
        wp = np.array([t.prev_weight for t in self.tracks])
        return float(np.sum(p.lambda_w * (1.0 - w) ** 2 + p.lambda_m * n**2 * (wp - w) ** 2))

    def objective(self, x, w):
        return self.cost(x, w) + self.weight_regularizer(w)

    def update_weights(self, x):
        r, _, _ = self.visual(x, False)
        rt = self.per_track_residual(r)
        p = self.params
        n = np.array([t.n_opt for t in self.tracks], dtype=float)
        wp = np.array([t.prev_weight for t in self.tracks])
        return optimal_weight_momentum(rt, p.lambda_w, p.lambda_m, wp, n), rt

    # -- linearization
    def normal_equations(self, x, w):
        """Gauss-Newton system (H, g) over all variables."""
        H = np.zeros((self.dim, self.dim))
        g = np.zeros(self.dim)
        if len(self.pi):
            r, J = self.inertial(x, True)
            HP = np.matmul(np.transpose(J, (0, 2, 1)), J)
            gP = np.einsum("pki,pk->pi", J, r)
            for n, i in enumerate(self.pi):
                c = NX * i
                H[c:c + 2 * NX, c:c + 2 * NX] += HP[n]
                g[c:c + 2 * NX] += gP[n]
        if self.prior is not None:
            r, (cols, B) = self.prior_factor(x, True)
            if isinstance(cols, slice):
                H[cols, cols] += B.T @ B
            else:
                H[np.ix_(cols, cols)] += B.T @ B
            g[cols] += B.T @ r
        if len(self.e_track):
            rv, V = self.visual_jacobian(x, w)
            put, vcols, S = self._visual_layout()
            nc = 6 * self.nk
            # compressed (6 nk + nt) system: the pose part as a dense (2E, 6 nk) matrix
            # so that the products run through BLAS, inverse depths through the incidence S
            Jp = np.zeros((2 * len(self.e_track), nc))
            np.put(Jp, put, V[:, :, :12])
            jr = V[:, :, 12].ravel()
            rvf = rv.ravel()
            Hc = np.empty((nc + self.nt, nc + self.nt))
            Hc[:nc, :nc] = Jp.T @ Jp
            Hpr = S @ (Jp * jr[:, None])
            Hc[nc:, :nc] = Hpr
            Hc[:nc, nc:] = Hpr.T
            Hc[nc:, nc:] = np.diag(S @ (jr * jr))
            H[np.ix_(vcols, vcols)] += Hc
            g[vcols] += np.concatenate([Jp.T @ rvf, S @ (jr * rvf)])
        return H, g

    def linearize(self, x, w):
        """Dense whitened Jacobian (all columns) and residual vector."""
        rd, factors = self.dense(x, True)
        E = len(self.e_track)
        J = np.zeros((len(rd) + 2 * E, self.dim))
        for r0, r1, blocks in factors:
            for ca, A in blocks:
                J[r0:r1, ca] += A
        res = [rd]
        if E:
            rv, V = self.visual_jacobian(x, w)
            cols, _ = self._columns()
            rows = len(rd) + 2 * np.arange(E)[:, None, None] + np.arange(2)[None, :, None]
            np.add.at(J, (np.broadcast_to(rows, V.shape), np.broadcast_to(cols[:, None, :], V.shape)), V)
            res.append(rv.ravel())
        return J, np.concatenate(res)


def _gauss_newton(prob: _Problem, x, w, params: SolverParams, report: SolveReport):
    """Damped Gauss-Newton on the pose/depth variables with weights held fixed."""
    mu = params.init_damping
    c = prob.cost(x, w)
    step = np.inf
    free = prob.free
    for _ in range(params.max_inner):
        report.inner_iterations += 1
        H, g = prob.normal_equations(x, w)
        fs = prob.free_slice
        H = H[fs, fs]
        g = g[fs]
        d = np.diag(H).copy()
        d[d <= 0.0] = 1e-9
        accepted = False
        while mu <= params.max_damping:
            A = H + mu * np.diag(d)
            try:
                cf = scipy.linalg.cho_factor(A, check_finite=False)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                mu *= 10.0
                continue
            dx = -scipy.linalg.cho_solve(cf, g, check_finite=False)
            if not np.all(np.isfinite(dx)):
                mu *= 10.0
                continue
            xt = prob.retract(x, dx)
            ct = prob.cost(xt, w)
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
        if step < params.tol_x:
            break
    return x, step


def solve_window(win: SlidingWindow, params: SolverParams) -> SolveReport:
    """Alternate closed-form weight updates with damped Gauss-Newton over the window.

    In ``baseline_huber`` mode the weights are not used and the visual residuals are
    robustified with a Huber loss instead. Updates the window in place.
    """
    report = SolveReport()
    tracks = win.active_tracks()
    prob = _Problem(win, params, tracks, win.keyframe_ids[:-1])
    x = prob.pack()
    # observations behind a camera at the start of the solve are excluded from it
    if len(prob.e_track):
        _, z, _ = prob.visual(x, False)
        ok = z > 1e-3
        report.n_invalid = int(np.sum(~ok))
        if not ok.all():
            prob.restrict_entries(ok)
    report.n_features = prob.nt
    w = np.array([t.weight for t in tracks]) if prob.nt else np.zeros(0)
    robust = params.robust

    def record(phase):
        report.objectives.append(prob.objective(x, w))
        report.phases.append(phase)

    if robust and prob.nt:
        w, _ = prob.update_weights(x)
    record("init")
    for it in range(params.max_alternations):
        report.alternations = it + 1
        x, step = _gauss_newton(prob, x, w, params, report)
        record("states")
        dw = 0.0
        if robust and prob.nt:
            w_new, _ = prob.update_weights(x)
            dw = float(np.max(np.abs(w_new - w)))
            w = w_new
            record("weights")
        if dw < params.tol_w and step < params.tol_x:
            report.converged = True
            break
        if not robust and step < params.tol_x:
            report.converged = True
            break
    if not all(np.isfinite(report.objectives)):
        raise SolverDivergedError("non-finite objective in window solve")
    prob.unpack(x)
    r, _, _ = prob.visual(x, False)
    rt = prob.per_track_residual(r) if prob.nt else np.zeros(0)
    for j, t in enumerate(tracks):
        t.residual = float(rt[j])
        if robust:
            t.weight = float(w[j])
            t.prev_weight = t.weight
        t.n_opt += 1
    return report


# ---------------------------------------------------------------------------
# Marginalization


def schur_prior(H, b, marg, keep, rel_eps=1e-10):
    """Eliminate ``marg`` from the quadratic ``dx^T H dx + 2 b^T dx``.

    Returns ``(H_p, r_p)`` such that ``|r_p - H_p dx_keep|^2`` equals the reduced
    quadratic up to a constant.
    """
    Hmm = H[np.ix_(marg, marg)]
    Hmk = H[np.ix_(marg, keep)]
    Hkk = H[np.ix_(keep, keep)]
    Hmm = 0.5 * (Hmm + Hmm.T)
    lam, V = np.linalg.eigh(Hmm)
    tol = rel_eps * max(lam.max(initial=0.0), 1.0)
    inv = np.where(lam > tol, 1.0 / np.where(lam > tol, lam, 1.0), 0.0)
    Hmm_inv = (V * inv) @ V.T
    Hs = Hkk - Hmk.T @ Hmm_inv @ Hmk
    bs = b[keep] - Hmk.T @ Hmm_inv @ b[marg]
    Hs = 0.5 * (Hs + Hs.T)
    lam, V = np.linalg.eigh(Hs)
    tol = rel_eps * max(lam.max(initial=0.0), 1.0)
    sel = lam > tol
    lam, V = lam[sel], V[:, sel]
    sq = np.sqrt(lam)
    Hp = sq[:, None] * V.T
    rp = -(V.T @ bs) / sq
    return Hp, rp


def exclusive_tracks(win: SlidingWindow):
    """Tracks anchored at the oldest keyframe that are no longer observed at the newest one."""
    k0, kn = win.keyframe_ids[0], win.keyframe_ids[-1]
    active = {t.feature_id for t in win.active_tracks()}
    return [t for t in win.tracks.values()
            if t.anchor == k0 and kn not in t.observations and t.feature_id in active]


def marginalize_oldest(win: SlidingWindow, params: SolverParams):
    """Fold the oldest keyframe and its exclusive features into the window prior, then drop them."""
    k0 = win.keyframe_ids[0]
    excl = exclusive_tracks(win)
    prob = _Problem(win, params, excl, [k0], use_prior=win.prior is not None and k0 in win.prior.keyframe_ids,
                    fix_first=False)
    x = prob.pack()
    if len(prob.e_track):
        _, z, _ = prob.visual(x, False)
        prob.restrict_entries(z > 1e-3)
    w = np.array([t.weight for t in excl]) if excl else np.zeros(0)
    J, r = prob.linearize(x, w)
    H, b = J.T @ J, J.T @ r
    used = np.abs(J).sum(axis=0) > 0
    marg = list(range(NX)) + [NX * prob.nk + j for j in range(prob.nt)]
    keep_k = [i for i in range(1, prob.nk) if used[NX * i:NX * (i + 1)].any()]
    # an existing prior that does not involve k0 is carried over untouched and merged below
    old = win.prior if (win.prior is not None and k0 not in win.prior.keyframe_ids) else None
    keep = [NX * i + c for i in keep_k for c in range(NX)]
    Hp, rp = schur_prior(H, b, marg, keep) if keep else (np.zeros((0, 0)), np.zeros(0))
    new_ids = [prob.kids[i] for i in keep_k]
    lin = {k: win.states[k] for k in new_ids}
    if old is not None:
        Hp, rp, new_ids, lin = _stack_priors(Hp, rp, new_ids, lin, old)
    win.prior = MarginalizationPrior(new_ids, lin, Hp, rp) if new_ids else None
    # drop the keyframe
    pose0 = win.states[k0].pose
    win.keyframe_ids.pop(0)
    del win.states[k0]
    win.preintegrations.pop(k0, None)
    for t in excl:
        del win.tracks[t.feature_id]
    for fid in list(win.tracks):
        t = win.tracks[fid]
        if t.anchor == k0:
            _reanchor(win, t, k0, pose0)
        t.observations.pop(k0, None)
        if not t.observations or t.anchor not in win.states:
            del win.tracks[fid]
    return excl


def _stack_priors(Hp, rp, ids, lin, old: MarginalizationPrior):
    all_ids = list(ids) + [k for k in old.keyframe_ids if k not in ids]
    pos = {k: i for i, k in enumerate(all_ids)}
    H = np.zeros((Hp.shape[0] + old.H.shape[0], NX * len(all_ids)))
    for n, k in enumerate(ids):
        H[:Hp.shape[0], NX * pos[k]:NX * (pos[k] + 1)] = Hp[:, NX * n:NX * (n + 1)]
    for n, k in enumerate(old.keyframe_ids):
        H[Hp.shape[0]:, NX * pos[k]:NX * (pos[k] + 1)] = old.H[:, NX * n:NX * (n + 1)]
    lin = dict(lin)
    for k in old.keyframe_ids:
        lin.setdefault(k, old.linearization[k])
    return H, np.concatenate([rp, old.r]), all_ids, lin


def _reanchor(win: SlidingWindow, t: FeatureTrack, k0, pose0: Pose):
    later = sorted(k for k in t.observations if k != k0 and k in win.states)
    if not later:
        return
    new = later[0]
    rho = None
    if t.inv_depth is not None:
        Pw = pose0.act(np.array([t.anchor_uv[0], t.anchor_uv[1], 1.0]) / t.inv_depth)
        P = win.states[new].pose.inverse().act(Pw)
        if P[2] > 0.05:
            rho = 1.0 / P[2]
    obs = t.observations[new]
    if rho is None:
        rho = stereo_inverse_depth(obs, win.baseline)
    t.anchor = new
    t.anchor_uv = np.asarray(obs.uv, float)
    t.inv_depth = rho


def initial_prior(kid, state: KeyframeState, params: SolverParams):
    """Prior on the first keyframe's velocity and biases (its pose is the fixed gauge)."""
    sig = np.concatenate([np.full(6, np.inf), np.full(3, params.velocity_prior_sigma),
                          np.full(3, params.bias_prior_sigma[0]), np.full(3, params.bias_prior_sigma[1])])
    rows = np.where(np.isfinite(sig))[0]
    H = np.zeros((len(rows), NX))
    H[np.arange(len(rows)), rows] = 1.0 / (sig[rows] * params.residual_scale)
    return MarginalizationPrior([kid], {kid: state}, H, np.zeros(len(rows)))
