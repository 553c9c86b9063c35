import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from robust_slam.geometry import Pose, rigid_align, so3_exp
from robust_slam.loop_backend import (BackendParams, Hypothesis, build_graph, cluster_graph,
                                      cluster_hypotheses, estimate_candidate_world_pose, group_keyframes,
                                      hypothesis_objective, hypothesis_weight_update, read_hypothesis_log,
                                      recluster, run_backend, run_huber_backend, selective_objective,
                                      selective_optimize, single_linkage, write_hypothesis_log)
from robust_slam.loop_backend.backend import loop_terms
from robust_slam.scene_sim import generate_dataset, preset
from robust_slam.scene_sim.drift import drifted_odometry
from robust_slam.types import LoopCandidate

import jacobian_checks as jc
from conftest import random_pose


def ate(poses, gt):
    return rigid_align(np.array([p.t for p in poses]), np.array([p.t for p in gt]))[2]


# -- grouping

def grouping_oracle(sets, alpha):
    """Direct scan: extend from each start while the running intersection keeps >= alpha tracks."""
    out, i, n = [], 0, len(sets)
    while i < n:
        j = i
        while j + 1 < n and len(set.intersection(*[set(s) for s in sets[i:j + 2]])) >= alpha:
            j += 1
        out.append(list(range(i, j + 1)))
        i = j + 1
    return out


def test_grouping_examples():
    assert [g.members for g in group_keyframes([set(range(100))] * 8, 10)] == [tuple(range(8))]
    sets = [set(range(20 * f, 20 * f + 15)) for f in range(6)]
    groups = group_keyframes(sets, 10)
    assert [g.members for g in groups] == [(f,) for f in range(6)]


@given(st.integers(1, 15), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_grouping_matches_predicate_scan(n, alpha, seed):
    rng = np.random.default_rng(seed)
    base = set(range(8))
    sets = []
    for _ in range(n):
        if rng.random() < 0.25:
            base = set(rng.choice(20, 8, replace=False).tolist())
        sets.append({t for t in base if rng.random() < 0.85} | {100 + int(rng.integers(50))})
    groups = group_keyframes(sets, alpha)
    assert [list(g.members) for g in groups] == grouping_oracle(sets, alpha)
    for g in groups:
        for pos, k in enumerate(g.members):
            assert len(set.intersection(*[sets[j] for j in range(g.start, k + 1)])) == g.shared[pos]
            if pos:
                assert g.shared[pos] >= alpha


# -- candidate world poses

def test_candidate_pose_examples(rng):
    I = Pose.identity()
    p = estimate_candidate_world_pose(I, I, I)
    assert np.linalg.norm(p.t) == 0.0 and p.angle_to(I) == 0.0
    wm, wk = random_pose(rng), random_pose(rng)
    est = estimate_candidate_world_pose(wm.inverse().compose(wk), wm, I)
    assert np.linalg.norm(est.t - wk.t) < 1e-9 and est.angle_to(wk) < 1e-9


def test_candidate_pose_matrix_oracle(rng):
    for _ in range(50):
        a, b, c = random_pose(rng), random_pose(rng), random_pose(rng)
        got = estimate_candidate_world_pose(a, b, c).matrix()
        np.testing.assert_allclose(got, b.matrix() @ a.matrix() @ c.matrix(), atol=1e-9)


# -- clustering

def linkage_oracle(points, d):
    """Repeated merging of any two clusters with a pair closer than d."""
    clusters = [{i} for i in range(len(points))]
    merged = True
    while merged:
        merged = False
        for a, b in itertools.combinations(range(len(clusters)), 2):
            if any(np.linalg.norm(points[i] - points[j]) <= d for i in clusters[a] for j in clusters[b]):
                clusters[a] |= clusters.pop(b)
                merged = True
                break
    return sorted(sorted(c) for c in clusters)


def partition(labels):
    out = {}
    for i, l in enumerate(labels):
        out.setdefault(l, []).append(i)
    return sorted(out.values())


@given(st.integers(1, 25), st.integers(0, 2**32 - 1))
def test_single_linkage_matches_oracle(n, seed):
    pts = np.random.default_rng(seed).uniform(0, 3, size=(n, 3))
    assert partition(single_linkage(pts, 0.5)) == linkage_oracle(pts, 0.5)


def poses_at(points):
    return [Pose(np.array([1.0, 0, 0, 0]), p) for p in points]


def test_cluster_examples():
    hyps = cluster_hypotheses(0, [4, 9], poses_at([[1, 2, 3], [1, 2, 3]]), 0.5)
    assert len(hyps) == 1 and hyps[0].members == (4, 9)
    pts = np.array([[0, 0, 0], [5, 0, 0], [10, 0, 0], [15, 0, 0]], float)
    hyps = cluster_hypotheses(0, [0, 1, 2, 3], poses_at(pts), 0.5, align_rms=[0.3, 0.1, 0.2, 0.4])
    # all singletons: ties on size broken by smaller alignment residual
    assert [h.members for h in hyps] == [(1,), (2,)]
    assert [h.rank for h in hyps] == [0, 1]


def test_cluster_ranking_by_size(rng):
    pts = np.concatenate([rng.normal(0, 0.05, (3, 3)), rng.normal(5, 0.05, (5, 3)), [[10, 10, 10]]])
    hyps = cluster_hypotheses(2, list(range(9)), poses_at(pts), 0.5)
    assert [h.size for h in hyps] == [5, 3]
    assert hyps[0].members == tuple(range(3, 8))
    np.testing.assert_allclose(hyps[0].centroid, pts[3:8].mean(0))


def test_rotation_gate_splits_clusters():
    a = Pose.identity()
    b = Pose.from_rt(so3_exp([0, 0, 1.0]), [0.1, 0, 0])
    assert len(cluster_hypotheses(0, [0, 1], [a, b], 0.5)) == 1
    assert len(cluster_hypotheses(0, [0, 1], [a, b], 0.5, rotation_gate=0.3)) == 2


# -- hypothesis weights

def grid_min(A0, A1, lam, n=201):
    g = np.linspace(0.0, 1.0, n)
    W0, W1 = np.meshgrid(g, g, indexing="ij")
    return hypothesis_objective(W0, W1, A0, A1, lam).min()


def test_weight_update_examples():
    assert hypothesis_weight_update(0.0, None, 4, None, 1.0) == (1.0, None)
    w0, w1 = hypothesis_weight_update(3.0, 3.0, 5, 5, 1.0)
    assert w0 == pytest.approx(w1, abs=1e-12)
    # A0 = 0.1, A1 = 10 via R = A |H|^2 with |H| = 1
    w0, w1 = hypothesis_weight_update(0.1, 10.0, 1, 1, 1.0)
    M = np.array([[1.1, 1.0], [1.0, 11.0]])
    np.testing.assert_allclose([w0, w1], np.linalg.solve(M, [1.0, 1.0]), atol=1e-12)
    assert hypothesis_objective(w0, w1, 0.1, 10.0, 1.0) <= grid_min(0.1, 10.0, 1.0) + 1e-12


def test_zero_residuals_satisfy_regularizer():
    w0, w1 = hypothesis_weight_update(0.0, 0.0, 3, 7, 2.0)
    assert w0 + w1 == pytest.approx(1.0, abs=1e-12)
    assert 0.0 <= w0 <= 1.0 and 0.0 <= w1 <= 1.0


def test_cardinality_normalization_by_hand():
    # A_h = R_h / |H_h|^2: R=8, |H|=4 -> A=0.5; single-hypothesis optimum lam/(A+lam)
    assert hypothesis_weight_update(8.0, None, 4, None, 1.0)[0] == pytest.approx(1.0 / 1.5, abs=1e-15)
    # duplicating every member doubles R and |H|, halving A
    assert hypothesis_weight_update(16.0, None, 8, None, 1.0)[0] == pytest.approx(1.0 / 1.25, abs=1e-15)


@given(st.floats(0.0, 50.0), st.floats(1.0, 10.0), st.integers(1, 6), st.integers(1, 6))
def test_selectivity_ordering(extra, lam, n0, n1):
    R1 = (10.0 + extra) * lam * n1**2
    w_true, w_false = hypothesis_weight_update(0.0, R1, n0, n1, lam)
    assert w_true > w_false


def test_weight_update_beats_grid_small():
    rng = np.random.default_rng(11)
    for _ in range(100):
        R0, R1 = rng.exponential(3.0, 2)
        n0, n1 = rng.integers(1, 6, 2)
        lam = rng.uniform(0.1, 3.0)
        w0, w1 = hypothesis_weight_update(R0, R1, n0, n1, lam)
        f = hypothesis_objective(w0, w1, R0 / n0**2, R1 / n1**2, lam)
        assert f <= grid_min(R0 / n0**2, R1 / n1**2, lam) + 1e-10


# -- pose graph

def test_edge_jacobians(rng):
    assert jc.check_pose_graph_edges(rng, 30) < 1e-5


@pytest.fixture(scope="module")
def static_loop():
    ds = generate_dataset(preset("static", noise_free=True))
    return ds, [s.pose for s in ds.gt_states]


def test_true_loops_noise_free_fixed_point(static_loop):
    ds, gt = static_loop
    res = run_backend(ds.times, gt, ds.loop_candidates, ds.track_sets())
    assert res.hypotheses and min(h.weight for h in res.hypotheses) > 0.99
    assert max(np.linalg.norm(p.t - g.t) for p, g in zip(res.poses, gt)) < 1e-6


def test_static_loop_reduces_drift():
    ds = generate_dataset(preset("static"))
    gt = [s.pose for s in ds.gt_states]
    odo = drifted_odometry(gt, seed=1)
    res = run_backend(ds.times, odo, ds.loop_candidates, ds.track_sets())
    assert ate(res.poses, gt) < ate(odo, gt)
    again = run_backend(ds.times, odo, ds.loop_candidates, ds.track_sets())
    np.testing.assert_array_equal([p.t for p in res.poses], [p.t for p in again.poses])
    assert [h.weight for h in res.hypotheses] == [h.weight for h in again.hypotheses]


def test_no_candidates_returns_odometry():
    ds = generate_dataset(preset("static"))
    odo = drifted_odometry([s.pose for s in ds.gt_states], seed=2)
    res = run_backend(ds.times, odo, [], ds.track_sets())
    assert res.poses == odo and res.hypotheses == []


def shifted(c, d):
    """Candidate whose matched points moved by d (in the m frame) between the visits."""
    pose = Pose(c.m_from_k.q, c.m_from_k.t - np.asarray(d))
    return LoopCandidate(c.k, c.m, pose, c.covariance, c.landmark_ids, False, c.align_rms)


def test_single_false_hypothesis_is_rejected():
    ds = generate_dataset(preset("static"))
    gt = [s.pose for s in ds.gt_states]
    odo = drifted_odometry(gt, seed=3)
    graph = build_graph(ds.times, odo, ds.loop_candidates, ds.track_sets(), BackendParams())
    # keep only the candidates of one group and make them all consistently wrong by 2 m
    gid = int(np.bincount(graph.candidate_group[graph.candidate_group >= 0]).argmax())
    false = [shifted(c, [2.0, 0.0, 0.0]) for c, g in zip(graph.candidates, graph.candidate_group) if g == gid]
    res = run_backend(ds.times, odo, false, ds.track_sets())
    assert len(res.hypotheses) == 1
    assert res.hypotheses[0].weight < 0.1
    assert ate(res.poses, gt) <= 1.1 * ate(odo, gt)


def test_selective_objective_descends():
    ds = generate_dataset(preset("e_shape", seed=1))
    gt = [s.pose for s in ds.gt_states]
    odo = drifted_odometry(gt, seed=1)
    res = run_backend(ds.times, odo, ds.loop_candidates, ds.track_sets())
    for rep in res.reports:
        obj = np.array(rep.objectives)
        assert np.all(np.diff(obj) <= 1e-9 * np.abs(obj[:-1]))
    assert all(0.0 <= h.weight <= 1.0 for h in res.hypotheses)
    assert all(len(g) <= 2 for g in res.graph.hypotheses.values())


def synthetic_split_graph():
    """30 keyframes on a line; keyframes 20-29 form one group and close loops onto 0-9."""
    gt = [Pose.from_rt(np.eye(3), [0.5 * i, 0.0, 0.0]) for i in range(30)]
    odo = [Pose.from_rt(np.eye(3), [0.5 * i, 0.1 * i, 0.0]) for i in range(30)]
    tracks = [set(range(100 + i, 130 + i)) for i in range(20)] + [set(range(20))] * 10
    cands = []
    for k, m in [(20, 0), (21, 1), (22, 8), (23, 9)]:
        cands.append(LoopCandidate(k, m, gt[m].inverse().compose(gt[k]), np.eye(6) * 1e-3, (), True, 0.0))
    return gt, odo, tracks, cands


def test_recluster_idempotent_and_merging():
    gt, odo, tracks, cands = synthetic_split_graph()
    params = BackendParams()
    graph = build_graph(np.arange(30.0), odo, cands, tracks, params)
    graph.hypotheses = cluster_graph(graph, params)
    gid = graph.candidate_group[0]
    assert sorted(h.size for h in graph.hypotheses[gid]) == [2, 2]
    before = {g: [h.members for h in hs] for g, hs in graph.hypotheses.items()}
    recluster(graph, params)
    assert {g: [h.members for h in hs] for g, hs in graph.hypotheses.items()} == before
    graph.poses = list(gt)
    recluster(graph, params)
    assert [h.size for h in graph.hypotheses[gid]] == [4]


def test_invalid_candidates_leave_no_hypotheses():
    gt, odo, tracks, cands = synthetic_split_graph()
    bad = [LoopCandidate(40 + i, c.m, c.m_from_k, c.covariance, (), True) for i, c in enumerate(cands)]
    graph = build_graph(np.arange(30.0), odo, bad, tracks, BackendParams())
    assert graph.candidates == [] and cluster_graph(graph, BackendParams()) == {}


def test_huber_baseline_accepts_everything():
    ds = generate_dataset(preset("e_shape", seed=2))
    gt = [s.pose for s in ds.gt_states]
    odo = drifted_odometry(gt, seed=2)
    hub = run_huber_backend(ds.times, odo, ds.loop_candidates)
    sel = run_backend(ds.times, odo, ds.loop_candidates, ds.track_sets())
    assert ate(sel.poses, gt) < ate(hub.poses, gt)


def test_hypothesis_log_round_trip(tmp_path, static_loop):
    ds, gt = static_loop
    res = run_backend(ds.times, gt, ds.loop_candidates, ds.track_sets())
    path = tmp_path / "hyp.csv"
    write_hypothesis_log(path, res)
    rows = read_hypothesis_log(path)
    assert [r["weight"] for r in rows] == [h.weight for h in res.hypotheses]
    assert {r["label"] for r in rows} == {"true"}
    assert path.read_text().splitlines()[0] == "group_id,hypothesis_rank,member_count,weight,mean_residual,label"


def test_backend_params_validation():
    with pytest.raises(ValueError):
        BackendParams(max_hypotheses=3)
    with pytest.raises(ValueError):
        BackendParams(lambda_l=0.0)
