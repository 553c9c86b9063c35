"""Command-line entry point: ``generate``, ``run``, ``eval`` and ``sweep``.

Output directories default to ``$ROBUST_SLAM_OUT/<command>`` (``./runs/<command>``
when the variable is unset). Exit status is 0 on success, 1 for usage or input
errors and 3 when a run diverged.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import config as cfgmod
from . import evaluation, pipeline
from .robust_ba.params import MODES
from .scene_sim import (LEVELS, DatasetError, InvalidScenarioError, ScenarioValidationError, generate_dataset,
                        read_dataset, scenario_from_dict, write_dataset)
from .scene_sim.scenario import PRESET_NAMES
from .tum import TrajectoryFormatError

log = logging.getLogger("robust_slam")

EXIT_ERROR = 1
EXIT_DIVERGED = 3


def _scenario(args):
    """Scenario from ``--config`` (its ``scenario`` section, or the whole file) plus flags."""
    d = {}
    source = "<flags>"
    if args.config:
        raw = cfgmod.read_config_file(args.config)
        d = raw.get("scenario", raw)
        source = args.config
    d = dict(d)
    if getattr(args, "preset", None):
        d["preset"] = args.preset
    if getattr(args, "level", None):
        d["level"] = args.level
    if args.seed is not None:
        d["seed"] = args.seed
    return scenario_from_dict(d, source)


def cmd_generate(args):
    sc = _scenario(args)
    out = args.out or cfgmod.default_out("dataset")
    ds = generate_dataset(sc)
    write_dataset(ds, out)
    print(f"wrote {ds.n_frames} keyframes, {len(ds.track_landmark)} tracks, "
          f"{len(ds.loop_candidates)} loop candidates to {out}")
    return 0


def _run_config(args):
    flags = {"mode": args.mode, "seed": args.seed, "profile": getattr(args, "profile", None),
             "workers": getattr(args, "workers", None)}
    if getattr(args, "no_loops", False):
        flags["loops"] = False
    return cfgmod.load_run_config(args.config, **flags)


def cmd_run(args):
    cfg = _run_config(args)
    ds = read_dataset(args.dataset)
    out_dir = args.out or cfgmod.default_out("run")
    res = pipeline.run_pipeline(ds, cfg)
    report = pipeline.write_run(out_dir, ds, cfg, res)
    ate = report.get("ate_rmse")
    print(f"{cfg.mode}: status={res.status}" + (f" ate={ate:.4f} m" if ate is not None else "") + f" -> {out_dir}")
    return 0 if res.status == "ok" else EXIT_DIVERGED


def cmd_eval(args):
    metrics = pipeline.evaluate_files(args.gt, args.est, args.weights, args.labels, args.hypotheses, args.align)
    out = args.out or cfgmod.default_out("metrics.json")
    if os.path.dirname(out):
        os.makedirs(os.path.dirname(out), exist_ok=True)
    evaluation.write_metrics(out, metrics)
    print(f"ate_rmse={metrics['ate_rmse']:.6f} m -> {out}")
    return 0


def _parse_seeds(text):
    """``"5"`` means seeds 0..4; ``"1,3,7"`` and ``"2-5"`` list them explicitly."""
    text = str(text).strip()
    if "," in text:
        return [int(s) for s in text.split(",") if s.strip()]
    if "-" in text[1:]:
        a, b = text.split("-", 1)
        return list(range(int(a), int(b) + 1))
    return list(range(int(text)))


def cmd_sweep(args):
    raw = cfgmod.read_config_file(args.config) if args.config else {}
    sw = dict(raw.get("sweep", {}))
    sc_dict = dict(raw.get("scenario", {}))
    if args.preset:
        sc_dict["preset"] = args.preset
    sc_dict.setdefault("preset", "dynamic_follow")
    sc_dict.pop("level", None)
    sc_dict.pop("seed", None)
    scenario = scenario_from_dict(sc_dict, args.config or "<flags>")
    levels = args.levels.split(",") if args.levels else sw.get("levels", list(LEVELS))
    modes = args.modes.split(",") if args.modes else sw.get("modes", list(MODES))
    if args.mode:
        modes = [args.mode]
    for m in modes:
        if m not in MODES:
            raise cfgmod.ConfigError(f"unknown mode {m!r}; choose from {MODES}")
    if args.seeds is not None:
        seeds = _parse_seeds(args.seeds)
    elif args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = list(sw.get("seeds", [0, 1, 2, 3, 4]))
    flags = {"workers": args.workers, "profile": args.profile}
    if args.no_loops:
        flags["loops"] = False
    run_dict = {k: v for k, v in raw.items() if k not in ("scenario", "sweep")}
    cfg = cfgmod.resolve_config(run_dict, flags, args.config or "<flags>")
    rows, summary = pipeline.run_sweep(scenario, levels, modes, seeds, cfg, cfg.workers)
    out = args.out or cfgmod.default_out("sweep")
    pipeline.write_sweep(out, rows, summary)
    for m, rd in summary["r_d"].items():
        med = rd["median"]
        print(f"{m}: median r_d({rd['level']}/none) = " + ("n/a" if med is None else f"{med:.3f}"))
    n_bad = sum(1 for r in rows if r["status"] != "ok")
    if n_bad:
        print(f"{n_bad} run(s) failed; recorded in results.csv")
    print(f"-> {out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="robust-slam", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a scenario and write a dataset directory")
    g.add_argument("--config", help="scenario JSON (may name a preset)")
    g.add_argument("--preset", choices=PRESET_NAMES)
    g.add_argument("--level", choices=list(LEVELS), help="dynamic level (rebalances static/dynamic counts)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run odometry and the loop backend on a dataset")
    r.add_argument("dataset")
    r.add_argument("--config", help="run config JSON")
    r.add_argument("--profile", choices=sorted(cfgmod.PROFILES))
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--seed", type=int, help="seed for stochastic front-end stand-ins")
    r.add_argument("--no-loops", action="store_true", help="skip the loop backend")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="compute metrics from trajectory and log files")
    e.add_argument("--gt", required=True, help="ground-truth TUM trajectory")
    e.add_argument("--est", required=True, help="estimated TUM trajectory")
    e.add_argument("--weights", help="feature weight log (weights.csv)")
    e.add_argument("--labels", help="track labels (tracks.csv of the dataset)")
    e.add_argument("--hypotheses", help="hypothesis log (hypotheses.csv)")
    e.add_argument("--align", choices=("se3", "sim3"), default="se3")
    e.add_argument("--out", help="metrics JSON path")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="level x mode x seed grid with degradation rates")
    s.add_argument("--config", help="JSON with optional 'scenario' and 'sweep' sections plus run settings")
    s.add_argument("--preset", choices=PRESET_NAMES)
    s.add_argument("--profile", choices=sorted(cfgmod.PROFILES))
    s.add_argument("--levels", help="comma-separated subset of " + ",".join(LEVELS))
    s.add_argument("--modes", help="comma-separated modes")
    s.add_argument("--mode", choices=MODES, help="run a single mode")
    s.add_argument("--seeds", help="count (5), range (2-5) or list (1,3)")
    s.add_argument("--seed", type=int, help="run a single seed")
    s.add_argument("--no-loops", action="store_true")
    s.add_argument("--workers", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (cfgmod.ConfigError, InvalidScenarioError, ScenarioValidationError, DatasetError,
            TrajectoryFormatError, evaluation.EvaluationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
