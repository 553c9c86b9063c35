"""Selective pose-graph optimization over clustered loop-closure hypotheses."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose
from ..robust_ba.weights import huber, huber_sqrt_weight
from .graph import EdgeSet, GraphState, WeightedGraph, edge_residuals, local_covariance, solve_graph
from .grouping import group_keyframes, group_of
from .hypotheses import (Hypothesis, candidate_world_poses, cluster_hypotheses, hypothesis_objective,
                         hypothesis_weight_update)

log = logging.getLogger(__name__)

HYPOTHESIS_COLUMNS = ("group_id", "hypothesis_rank", "member_count", "weight", "mean_residual", "label")


@dataclass(frozen=True)
class BackendParams:
    """Loop backend settings.

    ``alpha`` is the minimum number of continuously shared tracks inside a keyframe
    group, ``d_c`` the clustering distance (m) and ``lambda_l`` the hypothesis
    regularization strength. ``odom_sigma_t``/``odom_sigma_r`` set the covariance
    of the local edges built from consecutive odometry poses.
    """

    alpha: int = 10
    d_c: float = 0.5
    lambda_l: float = 1.0
    rounds: int = 2
    max_hypotheses: int = 2
    rotation_gate: float | None = None
    max_alternations: int = 20
    max_inner: int = 10
    tol_w: float = 1e-3
    tol_x: float = 1e-6
    odom_sigma_t: float = 0.05
    odom_sigma_r: float = 0.01
    huber_delta: float = 1.0

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if not self.d_c > 0.0 or not self.lambda_l > 0.0:
            raise ValueError("d_c and lambda_l must be > 0")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 1 <= self.max_hypotheses <= 2:
            raise ValueError("max_hypotheses must be 1 or 2")


@dataclass
class PoseGraph:
    times: np.ndarray
    poses: list
    local: EdgeSet
    candidates: list
    loops: EdgeSet
    groups: list
    candidate_group: np.ndarray
    hypotheses: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.poses)

    def hypothesis_list(self):
        return [h for gid in sorted(self.hypotheses) for h in self.hypotheses[gid]]


@dataclass
class SelectiveReport:
    objectives: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    alternations: int = 0
    converged: bool = False


@dataclass
class BackendResult:
    times: np.ndarray
    poses: list
    hypotheses: list
    reports: list
    graph: PoseGraph | None = None
    hypothesis_labels: list = field(default_factory=list)
    mean_residuals: list = field(default_factory=list)


def local_edges(poses, sigma_t, sigma_r):
    pairs = [(i, i + 1) for i in range(len(poses) - 1)]
    meas = [poses[i].inverse().compose(poses[i + 1]) for i in range(len(poses) - 1)]
    cov = local_covariance(sigma_t, sigma_r)
    return EdgeSet.build(pairs, meas, [cov] * len(pairs))


def valid_candidates(candidates, n):
    return [c for c in candidates if 0 <= c.m < c.k < n]


def build_graph(times, odometry_poses, candidates, track_sets, params: BackendParams) -> PoseGraph:
    poses = list(odometry_poses)
    n = len(poses)
    cands = valid_candidates(candidates, n)
    groups = group_keyframes(track_sets, params.alpha) if track_sets is not None else []
    if groups and groups[-1].end != n - 1:
        raise ValueError(f"track sets cover {groups[-1].end + 1} keyframes, trajectory has {n}")
    gof = group_of(groups)
    loops = EdgeSet.build([(c.m, c.k) for c in cands], [c.m_from_k for c in cands], [c.covariance for c in cands])
    return PoseGraph(np.asarray(times, dtype=float), poses, local_edges(poses, params.odom_sigma_t, params.odom_sigma_r),
                     cands, loops, groups, np.array([gof.get(c.k, -1) for c in cands], dtype=int))


def loop_terms(graph: PoseGraph, state: GraphState | None = None):
    """Squared whitened residual of every loop candidate at the given (or current) poses."""
    if not len(graph.loops):
        return np.zeros(0)
    if state is None:
        state = GraphState.from_poses(graph.poses)
    r, _, _ = edge_residuals(state.R, state.t, graph.loops, False)
    return np.einsum("ij,ij->i", r, r)


def _group_residuals(hyps, terms):
    return [float(np.sum(terms[list(h.members)])) for h in hyps]


def _update_group_weights(hyps, terms, lam):
    R = _group_residuals(hyps, terms)
    if len(hyps) == 1:
        w0, _ = hypothesis_weight_update(R[0], None, hyps[0].size, None, lam)
        return [w0]
    return list(hypothesis_weight_update(R[0], R[1], hyps[0].size, hyps[1].size, lam))


def cluster_graph(graph: PoseGraph, params: BackendParams):
    """Cluster every group's candidates at the current poses; weights start at the closed form."""
    terms = loop_terms(graph)
    out = {}
    for g in graph.groups:
        ids = np.nonzero(graph.candidate_group == g.group_id)[0]
        if len(ids) == 0:
            continue
        cands = [graph.candidates[i] for i in ids]
        wp = candidate_world_poses(cands, graph.poses, g.start)
        hyps = cluster_hypotheses(g.group_id, ids.tolist(), wp, params.d_c, [c.align_rms for c in cands],
                                  params.max_hypotheses, params.rotation_gate)
        for h, w in zip(hyps, _update_group_weights(hyps, terms, params.lambda_l)):
            h.weight = w
        out[g.group_id] = hyps
    return out


def recluster(graph: PoseGraph, params: BackendParams):
    """Recompute hypotheses from the current poses, carrying weights over by majority membership.

    A new cluster inherits the weight of an old hypothesis of the same group that
    contributes more than half of its members; otherwise its weight is reset to the
    single-hypothesis closed form at the current poses.
    """
    old = graph.hypotheses
    new = cluster_graph(graph, params)
    terms = loop_terms(graph)
    for gid, hyps in new.items():
        for h in hyps:
            carried = None
            for o in old.get(gid, []):
                if len(set(h.members) & set(o.members)) * 2 > h.size:
                    carried = o.weight
                    break
            if carried is None:
                A = float(np.sum(terms[list(h.members)]))
                h.weight, _ = hypothesis_weight_update(A, None, h.size, None, params.lambda_l)
            else:
                h.weight = carried
    graph.hypotheses = new
    return new


def _selective_problem(graph: PoseGraph):
    hyps = graph.hypothesis_list()
    idx = [i for h in hyps for i in h.members]
    owner = np.concatenate([np.full(h.size, j) for j, h in enumerate(hyps)]) if hyps else np.zeros(0, int)
    edges = EdgeSet.concat(graph.local, graph.loops.subset(idx)) if idx else graph.local
    return hyps, np.asarray(idx, dtype=int), owner.astype(int), edges


def selective_objective(graph: PoseGraph, state: GraphState, lam):
    """Local-chain cost plus the weighted hypothesis terms and their regularizers."""
    r, _, _ = edge_residuals(state.R, state.t, graph.local, False)
    c = float(np.sum(r * r))
    terms = loop_terms(graph, state)
    for gid in sorted(graph.hypotheses):
        hyps = graph.hypotheses[gid]
        R = _group_residuals(hyps, terms)
        A = [Rh / h.size**2 for Rh, h in zip(R, hyps)]
        if len(hyps) == 1:
            c += hypothesis_objective(hyps[0].weight, 0.0, A[0], 0.0, lam)
        else:
            c += hypothesis_objective(hyps[0].weight, hyps[1].weight, A[0], A[1], lam)
    return c


def selective_optimize(graph: PoseGraph, params: BackendParams):
    """Alternate pose updates (weights fixed) and exact hypothesis-weight updates (poses fixed).

    Loop residuals of hypothesis h are scaled by ``w_h / |H_h|``; local edges are
    unweighted. Updates ``graph.poses`` and the hypothesis weights in place.
    """
    rep = SelectiveReport()
    lam = params.lambda_l
    state = GraphState.from_poses(graph.poses)
    hyps, idx, owner, edges = _selective_problem(graph)
    nl = len(graph.local)
    rep.objectives.append(selective_objective(graph, state, lam))
    rep.phases.append("init")
    for it in range(params.max_alternations):
        rep.alternations = it + 1
        scale = np.ones(len(edges))
        if len(idx):
            scale[nl:] = np.array([hyps[o].weight / hyps[o].size for o in owner])
        wg = WeightedGraph(graph.n, edges, scale)
        state, sr = solve_graph(wg, state, params.max_inner, params.tol_x)
        rep.objectives.append(selective_objective(graph, state, lam))
        rep.phases.append("poses")
        terms = loop_terms(graph, state)
        dw = 0.0
        for gid in sorted(graph.hypotheses):
            group = graph.hypotheses[gid]
            for h, w in zip(group, _update_group_weights(group, terms, lam)):
                dw = max(dw, abs(w - h.weight))
                h.weight = w
        rep.objectives.append(selective_objective(graph, state, lam))
        rep.phases.append("weights")
        if dw < params.tol_w and sr.step < params.tol_x:
            rep.converged = True
            break
    if not rep.converged:
        log.info("selective optimization stopped after %d alternations without converging", rep.alternations)
    graph.poses = state.poses()
    return graph.poses, [h.weight for h in hyps], rep


def hypothesis_label(graph: PoseGraph, h: Hypothesis):
    """Majority ground-truth label of the members ('' when the candidates carry no labels)."""
    labels = [graph.candidates[i].is_true for i in h.members]
    if any(l is None for l in labels):
        return ""
    return "true" if 2 * sum(bool(l) for l in labels) > len(labels) else "false"


def run_backend(times, odometry_poses, candidates, track_sets, params: BackendParams = BackendParams()):
    """Cluster, selectively optimize and recluster for ``params.rounds`` rounds."""
    graph = build_graph(times, odometry_poses, candidates, track_sets, params)
    if not graph.candidates:
        return BackendResult(graph.times, list(odometry_poses), [], [], graph)
    graph.hypotheses = cluster_graph(graph, params)
    reports = []
    for rnd in range(params.rounds):
        if rnd > 0:
            recluster(graph, params)
        _, _, rep = selective_optimize(graph, params)
        reports.append(rep)
    hyps = graph.hypothesis_list()
    terms = loop_terms(graph)
    return BackendResult(graph.times, graph.poses, hyps, reports, graph,
                         [hypothesis_label(graph, h) for h in hyps],
                         [float(np.mean(terms[list(h.members)])) for h in hyps])


def run_huber_backend(times, odometry_poses, candidates, params: BackendParams = BackendParams()):
    """Baseline: accept every loop candidate, robustified with a Huber loss."""
    graph = build_graph(times, odometry_poses, candidates, None, params)
    if not graph.candidates:
        return BackendResult(graph.times, list(odometry_poses), [], [], graph)
    edges = EdgeSet.concat(graph.local, graph.loops)
    mask = np.zeros(len(edges), bool)
    mask[len(graph.local):] = True
    delta = params.huber_delta
    wg = WeightedGraph(graph.n, edges, robust=lambda s: (huber(s, delta), huber_sqrt_weight(s, delta)),
                       robust_mask=mask)
    state, rep = solve_graph(wg, GraphState.from_poses(graph.poses), params.max_inner * params.max_alternations,
                             params.tol_x)
    graph.poses = state.poses()
    return BackendResult(graph.times, graph.poses, [], [rep], graph)


def write_hypothesis_log(path, result: BackendResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HYPOTHESIS_COLUMNS)
        for h, label, res in zip(result.hypotheses, result.hypothesis_labels, result.mean_residuals):
            w.writerow([h.group_id, h.rank, h.size, repr(float(h.weight)), repr(float(res)), label])


def read_hypothesis_log(path):
    with open(path, newline="") as fh:
        return [{"group_id": int(r["group_id"]), "hypothesis_rank": int(r["hypothesis_rank"]),
                 "member_count": int(r["member_count"]), "weight": float(r["weight"]),
                 "mean_residual": float(r["mean_residual"]), "label": r.get("label", "")}
                for r in csv.DictReader(fh)]
