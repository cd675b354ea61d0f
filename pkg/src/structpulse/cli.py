"""Command-line entry point.

Subcommands: run, bench, pareto, ablate, sensitivity, fairness, robust,
stats, report.  Logs go to standard error; data only to files in the
output directory.  Exit codes: 0 success, 1 aborted with an error
record on stderr, 2 completed with flagged (failed) cells.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import bench
from .config import (ConfigError, ExperimentConfig, PRESET_NAMES, METHODS,
                     default_config, parse_config, parse_config_dict,
                     serialize_config)

log = logging.getLogger("structpulse")

EXIT_OK = 0
EXIT_ABORTED = 1
EXIT_FLAGGED = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structpulse",
        description="Structured pulse synthesis benchmark toolkit")
    parser.add_argument("--config", metavar="PATH", help="JSON experiment config")
    parser.add_argument("--preset", choices=PRESET_NAMES,
                        help="run a single built-in task preset")
    parser.add_argument("--seeds", metavar="A,B,C",
                        help="comma-separated seed list override")
    parser.add_argument("--out", metavar="DIR", help="output directory override")
    parser.add_argument("--workers", type=int, metavar="K",
                        help="worker-pool size override")
    parser.add_argument("--grad-mode", choices=("paper-form", "exact"),
                        help="fidelity-gradient mode override")
    parser.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run a single (task, method, seed) cell")
    run_p.add_argument("--task", help="task name (defaults to the only configured task)")
    run_p.add_argument("--method", required=True, choices=METHODS)
    run_p.add_argument("--seed", type=int, default=3)
    sub.add_parser("bench", help="multi-seed benchmark over tasks x methods x seeds")
    sub.add_parser("pareto", help="fidelity-complexity scan with front extraction")
    sub.add_parser("ablate", help="constraint-component ablation")
    sub.add_parser("sensitivity", help="one-at-a-time hyperparameter scan")
    sub.add_parser("fairness", help="filtered-baseline fairness table")
    sub.add_parser("robust", help="post-training robustness evaluation")
    sub.add_parser("stats", help="significance analysis of stored runs")
    sub.add_parser("report", help="regenerate aggregate CSVs from stored runs")
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = parse_config(args.config)
        if args.preset:
            raise ConfigError("--preset and --config are mutually exclusive")
    elif args.preset:
        cfg = parse_config_dict({"preset": args.preset}, origin="cli")
    else:
        cfg = default_config()
    if args.seeds:
        try:
            seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
        except ValueError as exc:
            raise ConfigError(f"--seeds: {exc}") from exc
        if not seeds or len(set(seeds)) != len(seeds):
            raise ConfigError(f"--seeds: need distinct, non-empty seeds, got {args.seeds!r}")
        cfg = replace(cfg, seeds=seeds)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if args.workers:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = replace(cfg, workers=args.workers)
    if args.grad_mode:
        cfg = replace(cfg, bundles=tuple(
            replace(b, padmm=replace(b.padmm, gradient_mode=args.grad_mode))
            for b in cfg.bundles))
    return cfg


def _cmd_run(cfg: ExperimentConfig, args) -> int:
    if args.task:
        bundle = cfg.bundle(args.task)
    elif len(cfg.bundles) == 1:
        bundle = cfg.bundles[0]
    else:
        raise ConfigError("--task is required when the config has several tasks")
    record = bench.run_cell(bundle, args.method, args.seed)
    out = Path(cfg.output_dir)
    bench.store_record(out, record)
    bench.write_residuals(out, record)
    summary = record.to_dict()
    summary.pop("final_field")
    summary.pop("residual_trace", None)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(message)s",
                        level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        cfg = resolve_config(args)
        out = Path(cfg.output_dir)
        if args.command == "run":
            return _cmd_run(cfg, args)
        if args.command == "bench":
            records, failures = bench.bench_multiseed(cfg, out)
            log.info("bench: %d runs completed, %d failed", len(records), len(failures))
            return EXIT_FLAGGED if failures else EXIT_OK
        if args.command == "pareto":
            rows = bench.pareto_scan(cfg, out)
            flagged = any(r[13] for r in rows)
            return EXIT_FLAGGED if flagged else EXIT_OK
        if args.command == "ablate":
            bench.run_ablation(cfg, out)
            return EXIT_OK
        if args.command == "sensitivity":
            bench.run_sensitivity(cfg, out)
            return EXIT_OK
        if args.command == "fairness":
            bench.run_fairness(cfg, out)
            return EXIT_OK
        if args.command == "robust":
            bench.run_robustness(cfg, out)
            return EXIT_OK
        if args.command == "stats":
            bench.run_significance(cfg, out)
            return EXIT_OK
        if args.command == "report":
            bench.report_aggregates(cfg, out)
            return EXIT_OK
        raise ValueError(f"unhandled command {args.command!r}")
    except Exception as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
