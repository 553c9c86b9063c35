"""Trajectory accuracy and weight-separation metrics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .geometry import AlignmentError, rigid_align


class EvaluationError(ValueError):
    pass


class UndefinedRateError(EvaluationError):
    pass


@dataclass
class TrajectoryPair:
    """Ground truth and estimate associated by nearest timestamp."""

    gt_times: np.ndarray
    gt_positions: np.ndarray
    est_times: np.ndarray
    est_positions: np.ndarray
    tolerance: float | None = None

    def __post_init__(self):
        for name in ("gt_times", "est_times"):
            t = np.asarray(getattr(self, name), dtype=float)
            if len(t) > 1 and np.any(np.diff(t) <= 0.0):
                raise EvaluationError(f"{name} must be strictly increasing")
            setattr(self, name, t)
        self.gt_positions = np.asarray(self.gt_positions, dtype=float).reshape(-1, 3)
        self.est_positions = np.asarray(self.est_positions, dtype=float).reshape(-1, 3)
        if len(self.gt_positions) != len(self.gt_times) or len(self.est_positions) != len(self.est_times):
            raise EvaluationError("times and positions differ in length")
        if self.tolerance is None:
            # half the keyframe period of the ground truth
            dt = np.median(np.diff(self.gt_times)) if len(self.gt_times) > 1 else 1.0
            self.tolerance = 0.5 * float(dt)

    @classmethod
    def from_poses(cls, gt_times, gt_poses, est_times, est_poses, tolerance=None):
        return cls(gt_times, [p.t for p in gt_poses], est_times, [p.t for p in est_poses], tolerance)

    def associate(self):
        """Index pairs (gt, est): each estimate is matched to its nearest ground-truth stamp."""
        gi, ei = [], []
        if len(self.gt_times) == 0:
            return np.zeros(0, int), np.zeros(0, int)
        pos = np.searchsorted(self.gt_times, self.est_times)
        used = set()
        for j, (t, p) in enumerate(zip(self.est_times, pos)):
            best = None
            for c in (p - 1, p):
                if 0 <= c < len(self.gt_times) and (best is None or abs(self.gt_times[c] - t) < abs(self.gt_times[best] - t)):
                    best = c
            if best is not None and abs(self.gt_times[best] - t) <= self.tolerance + 1e-12 and best not in used:
                used.add(best)
                gi.append(best)
                ei.append(j)
        return np.array(gi, dtype=int), np.array(ei, dtype=int)


def ate_rmse(pair: TrajectoryPair, align="se3"):
    """RMSE of positions after aligning the estimate onto ground truth (``se3`` or ``sim3``)."""
    if align not in ("se3", "sim3"):
        raise EvaluationError(f"alignment must be 'se3' or 'sim3', got {align!r}")
    gi, ei = pair.associate()
    if len(gi) < 2:
        raise EvaluationError(f"need at least 2 associated poses, got {len(gi)}")
    gt = pair.gt_positions[gi]
    est = pair.est_positions[ei]
    if not np.all(np.isfinite(est)):
        raise EvaluationError("estimate contains non-finite positions")
    try:
        _, _, rms = rigid_align(est, gt, estimate_scale=(align == "sim3"))
    except AlignmentError:
        # fewer than three non-collinear positions: fall back to a translation-only fit
        if align == "sim3":
            raise
        d = gt - est
        d -= d.mean(axis=0)
        rms = float(np.sqrt((d**2).sum(axis=1).mean()))
    return rms


def degradation_rate(ate_high, ate_none):
    """Ratio of the error at the highest dynamic level to the error without dynamics."""
    if not ate_none > 0.0:
        raise UndefinedRateError(f"degradation rate undefined for ate_none={ate_none}")
    return float(ate_high) / float(ate_none)


def auroc(scores, positive):
    """Area under the ROC curve of ``scores`` for the boolean labels ``positive`` (rank statistic).

    Ties count one half. Returns None when only one class is present.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(positive, dtype=bool)
    n1, n0 = int(y.sum()), int((~y).sum())
    if n1 == 0 or n0 == 0:
        return None
    ranks = rankdata(s)
    return float((ranks[y].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def final_weights(rows):
    """Last logged weight per feature id from (keyframe, feature, weight, ...) rows."""
    out = {}
    for row in rows:
        out[int(row[1])] = float(row[2])
    return out


def weight_separation_stats(weights, labels, positive="static", negative="dynamic"):
    """Summary of feature weights per label and AUROC of weight as a ``positive``-vs-``negative`` score.

    ``weights`` maps feature id to weight and ``labels`` maps feature id to a label
    string. Features without a label raise; labels other than the two classes are
    summarized but left out of the AUROC.
    """
    missing = [f for f in weights if f not in labels]
    if missing:
        raise EvaluationError(f"{len(missing)} logged features have no label (e.g. {missing[0]})")
    per = {}
    for f, w in weights.items():
        per.setdefault(labels[f], []).append(w)
    stats = {"per_label": {k: {"count": len(v), "mean": float(np.mean(v)), "median": float(np.median(v))}
                           for k, v in sorted(per.items())}}
    ids = [f for f in weights if labels[f] in (positive, negative)]
    a = auroc([weights[f] for f in ids], [labels[f] == positive for f in ids]) if ids else None
    stats["auroc"] = a
    stats["auroc_defined"] = a is not None
    return stats


def hypothesis_stats(rows):
    """Weights of logged hypotheses grouped by their pass-through label."""
    per = {}
    for r in rows:
        per.setdefault(r.get("label") or "unlabeled", []).append(float(r["weight"]))
    return {k: {"count": len(v), "mean": float(np.mean(v)), "min": float(np.min(v)), "max": float(np.max(v))}
            for k, v in sorted(per.items())}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_metrics(path, metrics):
    with open(path, "w") as fh:
        json.dump(_clean(metrics), fh, indent=2, sort_keys=True)
        fh.write("\n")
