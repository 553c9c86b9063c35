"""Keyframe grouping, loop-hypothesis clustering and selective pose-graph optimization."""
from .backend import (HYPOTHESIS_COLUMNS, BackendParams, BackendResult, PoseGraph, SelectiveReport, build_graph,
                      cluster_graph, read_hypothesis_log, recluster, run_backend, run_huber_backend,
                      selective_objective, selective_optimize, write_hypothesis_log)
from .graph import EdgeSet, GraphState, WeightedGraph, edge_residuals, solve_graph
from .grouping import KeyframeGroup, group_keyframes
from .hypotheses import (Hypothesis, candidate_world_poses, cluster_hypotheses, estimate_candidate_world_pose,
                         hypothesis_objective, hypothesis_weight_update, single_linkage)

__all__ = [
    "BackendParams", "BackendResult", "EdgeSet", "GraphState", "HYPOTHESIS_COLUMNS", "Hypothesis", "KeyframeGroup",
    "PoseGraph", "SelectiveReport", "WeightedGraph", "build_graph", "candidate_world_poses", "cluster_graph",
    "cluster_hypotheses", "edge_residuals", "estimate_candidate_world_pose", "group_keyframes",
    "hypothesis_objective", "hypothesis_weight_update", "read_hypothesis_log", "recluster", "run_backend",
    "run_huber_backend", "selective_objective", "selective_optimize", "single_linkage", "solve_graph",
    "write_hypothesis_log",
]
