import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from robust_slam.evaluation import (EvaluationError, TrajectoryPair, UndefinedRateError, ate_rmse, auroc,
                                    degradation_rate, final_weights, hypothesis_stats, weight_separation_stats,
                                    write_metrics)
from robust_slam.geometry import so3_exp


def helix(n=40):
    t = np.arange(n) * 0.1
    return t, np.stack([np.cos(t), np.sin(t), 0.1 * t], axis=1)


def svd_rmse(est, gt):
    """Independent Kabsch fit: rotation from the SVD of the cross-covariance."""
    me, mg = est.mean(0), gt.mean(0)
    H = (est - me).T @ (gt - mg)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    r = (gt - mg) - (est - me) @ R.T
    return float(np.sqrt((r**2).sum(1).mean()))


def test_ate_identical_is_zero():
    t, p = helix()
    assert ate_rmse(TrajectoryPair(t, p, t, p)) == pytest.approx(0.0, abs=1e-12)


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_ate_rigid_invariant(rot, trans):
    t, p = helix()
    moved = p @ so3_exp(np.array(rot)).T + np.array(trans)
    assert ate_rmse(TrajectoryPair(t, p, t, moved)) < 1e-9


def test_ate_noise_matches_svd_oracle(rng):
    t, p = helix()
    est = p + rng.normal(0, 0.05, p.shape)
    assert ate_rmse(TrajectoryPair(t, p, t, est)) == pytest.approx(svd_rmse(est, p), rel=1e-9)


def test_sim3_absorbs_scale():
    t, p = helix()
    pair = TrajectoryPair(t, p, t, 2.5 * p + 1.0)
    assert ate_rmse(pair, "sim3") < 1e-9
    assert ate_rmse(pair, "se3") > 0.1
    with pytest.raises(EvaluationError):
        ate_rmse(pair, "affine")


def test_association_tolerance():
    t, p = helix(10)
    pair = TrajectoryPair(t, p, t[::2] + 0.01, p[::2])
    gi, ei = pair.associate()
    assert list(gi) == [0, 2, 4, 6, 8] and list(ei) == list(range(5))
    far = TrajectoryPair(t, p, t + 0.03, p, tolerance=0.02)
    assert len(far.associate()[0]) == 0
    assert len(TrajectoryPair(t, p, t + 0.03, p).associate()[0]) == 10   # default: half a period
    with pytest.raises(EvaluationError):
        ate_rmse(far)


def test_unsorted_times_rejected():
    t, p = helix(5)
    with pytest.raises(EvaluationError):
        TrajectoryPair(t[::-1], p, t, p)


def test_degradation_rate():
    # quoted example: 0.148 / 0.171 with three-decimal inputs
    assert abs(degradation_rate(0.148, 0.171) - 0.864) < 3e-3
    assert degradation_rate(0.37, 0.37) == 1.0
    with pytest.raises(UndefinedRateError):
        degradation_rate(0.1, 0.0)


def pairwise_auroc(scores, pos):
    """O(n^2) oracle: fraction of (positive, negative) pairs ordered correctly, ties one half."""
    P = [s for s, y in zip(scores, pos) if y]
    N = [s for s, y in zip(scores, pos) if not y]
    return sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(P, N)) / (len(P) * len(N))


@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=40))
def test_auroc_matches_pairwise(data):
    scores = [s / 5 for s, _ in data]
    pos = [y for _, y in data]
    got = auroc(scores, pos)
    if all(pos) or not any(pos):
        assert got is None
    else:
        assert got == pytest.approx(pairwise_auroc(scores, pos), abs=1e-12)


def test_auroc_examples():
    assert auroc([0.9, 0.8, 0.1], [True, True, False]) == 1.0
    assert auroc([0.5] * 4, [True, False, True, False]) == 0.5
    assert auroc([0.1, 0.2], [True, True]) is None


def test_weight_separation_stats():
    w = final_weights([(0, 1, 0.2, 1, 0.0), (1, 1, 0.9, 2, 0.0), (1, 2, 0.1, 1, 0.0), (1, 3, 0.5, 1, 0.0)])
    assert w == {1: 0.9, 2: 0.1, 3: 0.5}
    s = weight_separation_stats(w, {1: "static", 2: "dynamic", 3: "other"})
    assert s["auroc"] == 1.0 and s["auroc_defined"]
    assert s["per_label"]["other"]["count"] == 1
    one = weight_separation_stats({1: 0.9}, {1: "static"})
    assert one["auroc"] is None and not one["auroc_defined"]
    with pytest.raises(EvaluationError):
        weight_separation_stats({7: 0.5}, {1: "static"})


def test_hypothesis_stats():
    rows = [{"weight": "0.9", "label": "true"}, {"weight": 0.01, "label": "false"}, {"weight": 0.8, "label": ""}]
    s = hypothesis_stats(rows)
    assert s["true"]["mean"] == 0.9 and s["false"]["max"] == 0.01 and s["unlabeled"]["count"] == 1


def test_write_metrics_cleans_values(tmp_path):
    path = tmp_path / "m.json"
    write_metrics(path, {"b": np.float64(np.nan), "a": [np.int64(3), float("inf")]})
    assert json.loads(path.read_text()) == {"a": [3, None], "b": None}
    assert path.read_text().index('"a"') < path.read_text().index('"b"')
