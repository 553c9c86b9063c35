"""End-to-end runs behind the command line: odometry, loop backend, evaluation and sweeps."""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import evaluation, tum
from .config import RunConfig
from .loop_backend import BackendResult, run_backend, run_huber_backend, write_hypothesis_log
from .robust_ba import run_odometry
from .robust_ba.odometry import read_weight_log, write_weight_log
from .scene_sim import Dataset, LEVELS, Scenario, generate_dataset, with_level
from .scene_sim.drift import drifted_odometry

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("level", "mode", "seed", "ate_m", "r_d", "status")


@dataclass
class RunOutput:
    times: np.ndarray
    odometry_poses: list
    poses: list
    status: str = "ok"
    odometry: object = None
    backend: BackendResult | None = None
    report: dict = field(default_factory=dict)


def _finite(poses):
    return all(np.all(np.isfinite(p.t)) and np.all(np.isfinite(p.q)) for p in poses)


def run_pipeline(ds: Dataset, cfg: RunConfig) -> RunOutput:
    """Odometry, then (unless disabled) the loop backend matching ``cfg.mode``."""
    times = np.asarray(ds.times, dtype=float)
    odo = None
    if cfg.frontend == "vio":
        odo = run_odometry(ds, cfg.solver)
        odo_poses, status = odo.poses, odo.status
    else:
        seed = ds.scenario.seed if cfg.seed is None else cfg.seed
        odo_poses = drifted_odometry([s.pose for s in ds.gt_states], cfg.drift_sigma[0], cfg.drift_sigma[1], seed)
        status = "ok"
    if not _finite(odo_poses):
        status = "diverged"
    report = {"mode": cfg.mode, "frontend": cfg.frontend, "n_keyframes": len(times), "status": status}
    if odo is not None:
        report["odometry"] = {"solves": len(odo.solves),
                              "converged_solves": sum(1 for s in odo.solves if s["converged"]),
                              "objectives_nonincreasing": all(_nonincreasing(s["objectives"]) for s in odo.solves)}
    backend = None
    poses = odo_poses
    if cfg.loops and ds.loop_candidates and status == "ok":
        if cfg.mode == "robust_weights":
            backend = run_backend(times, odo_poses, ds.loop_candidates, ds.track_sets(), cfg.backend)
            report["backend"] = {
                "kind": "selective",
                "n_candidates": len(backend.graph.candidates),
                "n_groups": len(backend.graph.groups),
                "n_hypotheses": len(backend.hypotheses),
                "rounds": [{"alternations": r.alternations, "converged": r.converged,
                            "objectives": r.objectives} for r in backend.reports],
            }
        else:
            backend = run_huber_backend(times, odo_poses, ds.loop_candidates, cfg.backend)
            report["backend"] = {"kind": "huber_accept_all", "n_candidates": len(backend.graph.candidates),
                                 "iterations": backend.reports[0].iterations}
        poses = backend.poses
        if not _finite(poses):
            report["status"] = status = "diverged"
    elif not cfg.loops:
        report["backend"] = {"kind": "skipped"}
    return RunOutput(times, list(odo_poses), list(poses), status, odo, backend, report)


def _nonincreasing(values, rtol=1e-9):
    return all(b <= a + rtol * max(1.0, abs(a)) for a, b in zip(values[:-1], values[1:]))


def write_run(out_dir, ds: Dataset, cfg: RunConfig, out: RunOutput):
    """Write trajectories, logs, the report and (when ground truth exists) metrics."""
    os.makedirs(out_dir, exist_ok=True)
    tum.write_tum(os.path.join(out_dir, "odometry.tum"), out.times, out.odometry_poses)
    tum.write_tum(os.path.join(out_dir, "trajectory.tum"), out.times, out.poses)
    files = ["odometry.tum", "trajectory.tum"]
    if out.odometry is not None:
        write_weight_log(os.path.join(out_dir, "weights.csv"), out.odometry.weight_log)
        files.append("weights.csv")
    if out.backend is not None and cfg.mode == "robust_weights":
        write_hypothesis_log(os.path.join(out_dir, "hypotheses.csv"), out.backend)
        files.append("hypotheses.csv")
    report = dict(out.report)
    report["files"] = files
    if ds.gt_states:
        gt = [s.pose for s in ds.gt_states]
        try:
            pair = evaluation.TrajectoryPair.from_poses(ds.times, gt, out.times, out.poses)
            report["ate_rmse"] = evaluation.ate_rmse(pair, cfg.align)
        except (evaluation.EvaluationError, ValueError) as exc:
            report["ate_rmse"] = None
            report["ate_error"] = str(exc)
    evaluation.write_metrics(os.path.join(out_dir, "report.json"), report)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def read_labels(path):
    """Track labels from a ``tracks.csv``; returns None when it has no ``kind`` column."""
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if not rd.fieldnames or "kind" not in rd.fieldnames or "track_id" not in rd.fieldnames:
            return None
        out = {}
        for lineno, row in enumerate(rd, start=2):
            try:
                out[int(row["track_id"])] = row["kind"]
            except ValueError as exc:
                raise evaluation.EvaluationError(f"{path}:{lineno}: {exc}") from None
        return out


def evaluate_files(gt_path, est_path, weights_path=None, labels_path=None, hypotheses_path=None, align="se3",
                   tolerance=None):
    """Metrics dict from files on disk; warnings are collected under ``"warnings"``."""
    from .loop_backend import read_hypothesis_log

    gt_t, gt_p = tum.read_tum(gt_path)
    est_t, est_p = tum.read_tum(est_path)
    pair = evaluation.TrajectoryPair.from_poses(gt_t, gt_p, est_t, est_p, tolerance)
    metrics = {"ate_rmse": evaluation.ate_rmse(pair, align), "align": align,
               "n_associated": int(len(pair.associate()[0])), "warnings": []}
    if weights_path:
        labels = read_labels(labels_path) if labels_path else None
        if labels is None:
            msg = "weight stats skipped: no label column" if labels_path else "weight stats skipped: no labels given"
            log.warning(msg)
            metrics["warnings"].append(msg)
        else:
            try:
                rows = read_weight_log(weights_path)
            except (KeyError, ValueError) as exc:
                raise evaluation.EvaluationError(f"{weights_path}: {exc}") from None
            metrics["weight_stats"] = evaluation.weight_separation_stats(evaluation.final_weights(rows), labels)
    if hypotheses_path:
        try:
            rows = read_hypothesis_log(hypotheses_path)
        except (KeyError, ValueError) as exc:
            raise evaluation.EvaluationError(f"{hypotheses_path}: {exc}") from None
        metrics["hypothesis_stats"] = evaluation.hypothesis_stats(rows)
    return metrics


# ---------------------------------------------------------------- sweeps

def _cell(args):
    """One (level, seed) grid cell: generate once, run every mode."""
    scenario, level, seed, modes, cfg = args
    rows = []
    try:
        ds = generate_dataset(replace(with_level(scenario, level), seed=seed))
    except Exception as exc:  # recorded, the sweep continues
        return [(level, m, seed, None, f"error: {exc}") for m in modes]
    gt = [s.pose for s in ds.gt_states]
    for mode in modes:
        c = replace(cfg, mode=mode, solver=replace(cfg.solver, mode=mode))
        try:
            out = run_pipeline(ds, c)
            if out.status != "ok":
                rows.append((level, mode, seed, None, out.status))
                continue
            pair = evaluation.TrajectoryPair.from_poses(ds.times, gt, out.times, out.poses)
            rows.append((level, mode, seed, evaluation.ate_rmse(pair, c.align), "ok"))
        except Exception as exc:
            log.warning("sweep cell level=%s mode=%s seed=%s failed: %s", level, mode, seed, exc)
            rows.append((level, mode, seed, None, f"diverged: {exc}"))
    return rows


def run_sweep(scenario: Scenario, levels, modes, seeds, cfg: RunConfig, workers=1):
    """Full level x mode x seed grid; returns (rows, summary).

    Each row is a dict with the ``SWEEP_COLUMNS``; ``r_d`` is the ratio of the
    row's error to the same mode and seed at level ``none`` (None when that run
    is missing or failed).
    """
    for lv in levels:
        if lv not in LEVELS:
            raise ValueError(f"unknown level {lv!r}; choose from {list(LEVELS)}")
    levels = sorted(set(levels), key=list(LEVELS).index)
    jobs = [(scenario, lv, s, tuple(modes), cfg) for lv in levels for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_cell, jobs))
    else:
        results = [_cell(j) for j in jobs]
    flat = {(lv, m, s): (ate, st) for cell in results for lv, m, s, ate, st in cell}
    rows = []
    for lv in levels:
        for m in modes:
            for s in seeds:
                ate, st = flat[lv, m, s]
                base = flat.get(("none", m, s), (None, None))[0]
                rd = None
                if ate is not None and base is not None:
                    try:
                        rd = evaluation.degradation_rate(ate, base)
                    except evaluation.UndefinedRateError:
                        rd = None
                rows.append({"level": lv, "mode": m, "seed": s, "ate_m": ate, "r_d": rd, "status": st})
    return rows, summarize_sweep(rows, levels, modes)


def summarize_sweep(rows, levels, modes):
    summary = {"levels": list(levels), "modes": list(modes), "per_level": {}, "r_d": {}}
    top = levels[-1]
    for m in modes:
        for lv in levels:
            ates = [r["ate_m"] for r in rows if r["mode"] == m and r["level"] == lv and r["ate_m"] is not None]
            n_fail = sum(1 for r in rows if r["mode"] == m and r["level"] == lv and r["ate_m"] is None)
            summary["per_level"].setdefault(m, {})[lv] = {
                "mean_ate_m": float(np.mean(ates)) if ates else None,
                "median_ate_m": float(np.median(ates)) if ates else None,
                "n_ok": len(ates), "n_failed": n_fail}
        rds = [r["r_d"] for r in rows if r["mode"] == m and r["level"] == top and r["r_d"] is not None]
        summary["r_d"][m] = {"level": top, "median": float(np.median(rds)) if rds else None,
                             "mean": float(np.mean(rds)) if rds else None, "n": len(rds)}
    return summary


def write_sweep(out_dir, rows, summary):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r["level"], r["mode"], r["seed"],
                        "" if r["ate_m"] is None else repr(float(r["ate_m"])),
                        "" if r["r_d"] is None else repr(float(r["r_d"])), r["status"]])
    evaluation.write_metrics(os.path.join(out_dir, "results.json"), {"rows": rows, "summary": summary})
