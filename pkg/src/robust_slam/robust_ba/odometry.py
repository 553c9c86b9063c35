"""Keyframe-by-keyframe odometry driver around the sliding-window solver."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose
from ..tum import write_tum
from ..types import KeyframeState
from .params import SolverParams
from .window import SlidingWindow, SolverDivergedError, initial_prior, marginalize_oldest, solve_window

log = logging.getLogger(__name__)

WEIGHT_COLUMNS = ("keyframe_id", "feature_id", "weight", "n", "residual")


class OdometryInputError(ValueError):
    pass


@dataclass
class OdometryResult:
    times: np.ndarray
    states: list
    weight_log: list = field(default_factory=list)
    solves: list = field(default_factory=list)
    status: str = "ok"
    runtime_s: float = 0.0

    @property
    def poses(self):
        return [s.pose for s in self.states]

    def final_weights(self):
        """Last logged weight per feature id."""
        out = {}
        for row in self.weight_log:
            out[row[1]] = row[2]
        return out


def propagate(state: KeyframeState, preint, gravity) -> KeyframeState:
    """Predict the next keyframe state from a preintegrated measurement."""
    g = np.asarray(gravity, dtype=float)
    R0, p0, v0 = state.pose.R, state.pose.t, np.asarray(state.velocity, float)
    dt = preint.dt
    R1 = R0 @ preint.dR
    v1 = v0 + g * dt + R0 @ preint.dv
    p1 = p0 + v0 * dt + 0.5 * g * dt * dt + R0 @ preint.dp
    return KeyframeState(Pose.from_rt(R1, p1), v1, np.array(state.bias_accel, float),
                         np.array(state.bias_gyro, float), state.timestamp + dt)


def run_odometry(dataset, params: SolverParams = SolverParams(), initial_state: KeyframeState | None = None):
    """Run the sliding-window estimator over every keyframe of ``dataset``.

    The first keyframe is initialized from ``initial_state`` (ground truth by default)
    and its pose fixes the gauge; later keyframes are predicted from the IMU.
    """
    n = dataset.n_frames
    if n == 0:
        raise OdometryInputError("dataset has no keyframes")
    if len(dataset.preintegrations) != n - 1:
        raise OdometryInputError(f"expected {n - 1} preintegrations between {n} keyframes, "
                                 f"got {len(dataset.preintegrations)}")
    gravity = np.asarray(dataset.scenario.gravity, dtype=float)
    t0 = time.perf_counter()
    if initial_state is None:
        gt = dataset.gt_states[0]
        initial_state = KeyframeState(gt.pose, np.array(gt.velocity, float), np.zeros(3), np.zeros(3),
                                      float(dataset.times[0]))
    win = SlidingWindow(params.window, gravity, dataset.scenario.camera.baseline)
    final = [None] * n
    result = OdometryResult(np.asarray(dataset.times, float), final)
    for k in range(n):
        if k == 0:
            win.add_keyframe(0, initial_state)
            win.prior = initial_prior(0, initial_state, params)
        else:
            pre = dataset.preintegrations[k - 1]
            win.add_keyframe(k, propagate(win.states[k - 1], pre, gravity), pre)
        win.add_observations(k, dataset.frames[k])
        win.triangulate_missing()
        if len(win) >= 2:
            try:
                rep = solve_window(win, params)
            except SolverDivergedError as exc:
                log.warning("keyframe %d: %s", k, exc)
                result.status = "diverged"
                break
            if not all(np.all(np.isfinite(s.pose.t)) for s in win.states.values()):
                result.status = "diverged"
                break
            result.solves.append({"keyframe_id": k, "objectives": rep.objectives, "phases": rep.phases,
                                  "alternations": rep.alternations, "inner_iterations": rep.inner_iterations,
                                  "converged": rep.converged, "n_features": rep.n_features})
            for t in win.active_tracks():
                result.weight_log.append((k, t.feature_id, t.weight, t.n_opt, t.residual))
        if win.full and k < n - 1:
            k0 = win.keyframe_ids[0]
            final[k0] = win.states[k0]
            marginalize_oldest(win, params)
    for kid in win.keyframe_ids:
        final[kid] = win.states[kid]
    if result.status != "ok":
        # keep the estimate so far; remaining keyframes are dead-reckoned
        last = max(i for i, s in enumerate(final) if s is not None)
        for k in range(last + 1, n):
            final[k] = propagate(final[k - 1], dataset.preintegrations[k - 1], gravity)
    result.runtime_s = time.perf_counter() - t0
    return result


def write_weight_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(WEIGHT_COLUMNS)
        for kid, fid, weight, n, res in rows:
            w.writerow([kid, fid, repr(float(weight)), n, repr(float(res))])


def read_weight_log(path):
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return [(int(r["keyframe_id"]), int(r["feature_id"]), float(r["weight"]), int(r["n"]),
                 float(r["residual"])) for r in rd]


def write_odometry(out_dir, result: OdometryResult, params: SolverParams, extra=None):
    import os
    os.makedirs(out_dir, exist_ok=True)
    write_tum(os.path.join(out_dir, "trajectory.tum"), result.times, result.poses)
    write_weight_log(os.path.join(out_dir, "weights.csv"), result.weight_log)
    report = {"status": result.status, "runtime_s": result.runtime_s, "mode": params.mode,
              "n_keyframes": len(result.times), "solves": result.solves}
    if extra:
        report.update(extra)
    with open(os.path.join(out_dir, "odometry_report.json"), "w") as fh:
        json.dump(report, fh, indent=1)
