"""Dataset assembly and the on-disk format.

Directory layout::

    manifest.json          resolved scenario + counts
    observations.csv       frame_id,feature_id,x,y,xr,yr   (feature_id = track id)
    preintegration.csv     k,dt,dp*,dv*,dq*(xyzw),ba*,bg*,cov00..cov88
    groundtruth.tum        timestamp tx ty tz qx qy qz qw
    gt_states.csv          timestamp,p*,q*(xyzw),v*,ba*,bg*
    loops.csv              k,m,t*,q*(xyzw),cov00..cov55,rms,landmarks,label
    tracks.csv             track_id,landmark_id,kind,first_frame,last_frame   (evaluation only)
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .. import tum
from ..geometry import Pose, quat_to_matrix, matrix_to_quat
from ..types import FeatureObservation, ImuPreintegration, KeyframeState, LoopCandidate
from .camera import observe
from .imu import synthesize_preintegration
from .landmarks import generate_landmarks
from .loops import make_loop_candidates
from .scenario import Scenario, scenario_from_dict
from .tracks import track_features
from .trajectory import generate_trajectory

FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    scenario: Scenario
    times: np.ndarray
    gt_states: list
    frames: list
    preintegrations: list
    loop_candidates: list
    track_landmark: dict
    track_kind: dict
    landmarks: list | None = None
    sampled: object = None
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self):
        return len(self.times)

    def visibility(self):
        """Landmark ids seen per frame (via the hidden track table)."""
        return [{self.track_landmark[o.feature_id] for o in obs} for obs in self.frames]

    def track_sets(self):
        return [{o.feature_id for o in obs} for obs in self.frames]


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(5)]


def generate_dataset(scenario: Scenario) -> Dataset:
    rng_bias, rng_lm, rng_obs, rng_imu, rng_loop = _streams(scenario.seed)
    noisy = not scenario.noise_free
    biases = (rng_bias.normal(0.0, scenario.bias_scale[0], 3), rng_bias.normal(0.0, scenario.bias_scale[1], 3))
    sampled = generate_trajectory(scenario.trajectory, scenario.trajectory_params,
                                  scenario.keyframe_rate, biases)
    landmarks = generate_landmarks(scenario, sampled, rng_lm)
    raw = [observe(st.pose, t, landmarks, scenario.camera, rng_obs if noisy else None, f)
           for f, (t, st) in enumerate(zip(sampled.times, sampled.states))]
    tracks, frames = track_features(raw)
    visibility = [{o.feature_id for o in obs} for obs in raw]
    gravity = np.array(scenario.gravity, dtype=float)
    preints = [synthesize_preintegration(a, b, gravity, scenario.imu, rng_imu if noisy else None)
               for a, b in zip(sampled.states[:-1], sampled.states[1:])]
    loops = make_loop_candidates(sampled, landmarks, visibility, scenario.loops,
                                 rng_loop if noisy else None)
    kinds = {lm.id: lm.kind.value for lm in landmarks}
    return Dataset(scenario, np.asarray(sampled.times), list(sampled.states), frames, preints, loops,
                   {t.track_id: t.landmark_id for t in tracks},
                   {t.track_id: kinds[t.landmark_id] for t in tracks},
                   landmarks, sampled,
                   {"track_frames": {t.track_id: (t.frames[0], t.frames[-1]) for t in tracks}})


def _f(x):
    return repr(float(x))


def _xyzw(q):
    return [q[1], q[2], q[3], q[0]]


def _wxyz(xyzw):
    x, y, z, w = xyzw
    return np.array([w, x, y, z])


def write_dataset(ds: Dataset, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "observations.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_id", "feature_id", "x", "y", "xr", "yr"])
        for obs in ds.frames:
            for o in obs:
                right = ["", ""] if o.uv_right is None else [_f(o.uv_right[0]), _f(o.uv_right[1])]
                w.writerow([o.frame_id, o.feature_id, _f(o.uv[0]), _f(o.uv[1])] + right)
    with open(os.path.join(out_dir, "preintegration.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "dt", "dpx", "dpy", "dpz", "dvx", "dvy", "dvz", "dqx", "dqy", "dqz", "dqw",
                    "bax", "bay", "baz", "bgx", "bgy", "bgz"] + [f"cov{i}{j}" for i in range(9) for j in range(9)])
        for k, p in enumerate(ds.preintegrations):
            row = [k, _f(p.dt)] + [_f(v) for v in p.dp] + [_f(v) for v in p.dv]
            row += [_f(v) for v in _xyzw(matrix_to_quat(p.dR))]
            row += [_f(v) for v in p.bias_accel] + [_f(v) for v in p.bias_gyro]
            row += [_f(v) for v in p.covariance.ravel()]
            w.writerow(row)
    tum.write_tum(os.path.join(out_dir, "groundtruth.tum"), ds.times, [s.pose for s in ds.gt_states])
    with open(os.path.join(out_dir, "gt_states.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "px", "py", "pz", "qx", "qy", "qz", "qw", "vx", "vy", "vz",
                    "bax", "bay", "baz", "bgx", "bgy", "bgz"])
        for t, s in zip(ds.times, ds.gt_states):
            w.writerow([_f(t)] + [_f(v) for v in s.pose.t] + [_f(v) for v in _xyzw(s.pose.q)]
                       + [_f(v) for v in s.velocity] + [_f(v) for v in s.bias_accel]
                       + [_f(v) for v in s.bias_gyro])
    with open(os.path.join(out_dir, "loops.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "m", "tx", "ty", "tz", "qx", "qy", "qz", "qw"]
                   + [f"cov{i}{j}" for i in range(6) for j in range(6)] + ["rms", "landmarks", "label"])
        for c in ds.loop_candidates:
            label = "" if c.is_true is None else ("true" if c.is_true else "false")
            w.writerow([c.k, c.m] + [_f(v) for v in c.m_from_k.t] + [_f(v) for v in _xyzw(c.m_from_k.q)]
                       + [_f(v) for v in c.covariance.ravel()] + [_f(c.align_rms),
                       " ".join(str(l) for l in c.landmark_ids), label])
    with open(os.path.join(out_dir, "tracks.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["track_id", "landmark_id", "kind", "first_frame", "last_frame"])
        spans = ds.meta.get("track_frames", {})
        for tid in sorted(ds.track_landmark):
            first, last = spans.get(tid, ("", ""))
            w.writerow([tid, ds.track_landmark[tid], ds.track_kind[tid], first, last])
    manifest = {
        "format_version": FORMAT_VERSION,
        "scenario": ds.scenario.to_dict(),
        "seed": ds.scenario.seed,
        "n_frames": ds.n_frames,
        "n_tracks": len(ds.track_landmark),
        "n_observations": sum(len(o) for o in ds.frames),
        "n_loop_candidates": len(ds.loop_candidates),
        "n_false_loop_candidates": sum(1 for c in ds.loop_candidates if c.is_true is False),
        "files": ["observations.csv", "preintegration.csv", "groundtruth.tum", "gt_states.csv",
                  "loops.csv", "tracks.csv"],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _rows(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def read_loop_candidates(path):
    out = []
    for lineno, row in _rows(path):
        try:
            t = [float(row[c]) for c in ("tx", "ty", "tz")]
            q = _wxyz([float(row[c]) for c in ("qx", "qy", "qz", "qw")])
            cov = np.array([float(row[f"cov{i}{j}"]) for i in range(6) for j in range(6)]).reshape(6, 6)
            label = row.get("label", "")
            ids = tuple(int(v) for v in row["landmarks"].split()) if row.get("landmarks") else ()
            out.append(LoopCandidate(int(row["k"]), int(row["m"]), Pose(q, t), cov, ids,
                                     None if not label else label == "true", float(row.get("rms") or 0.0)))
        except (KeyError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
    return out


def read_dataset(path) -> Dataset:
    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{path}: cannot read manifest: {exc}") from None
    scenario = scenario_from_dict(manifest["scenario"], os.path.join(path, "manifest.json"))
    gt = []
    times = []
    for lineno, row in _rows(os.path.join(path, "gt_states.csv")):
        v = lambda *cols: np.array([float(row[c]) for c in cols])
        times.append(float(row["timestamp"]))
        pose = Pose(_wxyz(v("qx", "qy", "qz", "qw")), v("px", "py", "pz"))
        gt.append(KeyframeState(pose, v("vx", "vy", "vz"), v("bax", "bay", "baz"), v("bgx", "bgy", "bgz"),
                                times[-1]))
    n = len(times)
    frames = [[] for _ in range(n)]
    obs_path = os.path.join(path, "observations.csv")
    for lineno, row in _rows(obs_path):
        try:
            f = int(row["frame_id"])
            right = None if row["xr"] == "" else np.array([float(row["xr"]), float(row["yr"])])
            frames[f].append(FeatureObservation(f, int(row["feature_id"]),
                                                np.array([float(row["x"]), float(row["y"])]), right))
        except (KeyError, ValueError, IndexError) as exc:
            raise DatasetError(f"{obs_path}:{lineno}: {exc}") from None
    preints = []
    pre_path = os.path.join(path, "preintegration.csv")
    for lineno, row in _rows(pre_path):
        try:
            v = lambda *cols: np.array([float(row[c]) for c in cols])
            if int(row["k"]) != len(preints):
                raise DatasetError(f"{pre_path}:{lineno}: preintegration {len(preints)} missing")
            cov = np.array([float(row[f"cov{i}{j}"]) for i in range(9) for j in range(9)]).reshape(9, 9)
            preints.append(ImuPreintegration(v("dpx", "dpy", "dpz"), v("dvx", "dvy", "dvz"),
                                             quat_to_matrix(_wxyz(v("dqx", "dqy", "dqz", "dqw"))),
                                             float(row["dt"]), cov, v("bax", "bay", "baz"), v("bgx", "bgy", "bgz")))
        except (KeyError, ValueError) as exc:
            raise DatasetError(f"{pre_path}:{lineno}: {exc}") from None
    track_landmark, track_kind, spans = {}, {}, {}
    tracks_path = os.path.join(path, "tracks.csv")
    if os.path.exists(tracks_path):
        for lineno, row in _rows(tracks_path):
            tid = int(row["track_id"])
            track_landmark[tid] = int(row["landmark_id"])
            track_kind[tid] = row["kind"]
            if row.get("first_frame"):
                spans[tid] = (int(row["first_frame"]), int(row["last_frame"]))
    loops_path = os.path.join(path, "loops.csv")
    loops = read_loop_candidates(loops_path) if os.path.exists(loops_path) else []
    return Dataset(scenario, np.array(times), gt, frames, preints, loops, track_landmark, track_kind,
                   meta={"track_frames": spans, "manifest": manifest})
