"""Command line front end.

``fedsub run config.json`` executes the configured experiment and writes
``metrics.csv`` plus a ``sweep.csv`` capacity/accuracy curve into the
output directory. Exit codes: 0 success, 2 configuration problems,
3 numeric failure during the run, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import ConfigError, apply_overrides, parse_config_dict
from .runner import NumericFailure, build_problem, emit_csv, run_experiment, sweep_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

_SWEEP_EXTRA = (0.05, 1 / 16, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsub",
        description="Model-heterogeneous federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("config", help="path to the JSON config file")
    run.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config entry by dotted path (repeatable)",
    )
    run.add_argument("--out", default=None, help="output directory (defaults to config's)")
    run.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if not isinstance(raw, dict):
            raise ConfigError("config: expected a JSON object")
        raw = apply_overrides(raw, args.override)
        cfg = parse_config_dict(raw)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = args.out if args.out is not None else cfg.output
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        result = run_experiment(cfg)
    except NumericFailure as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    try:
        _, _, _, gtest = build_problem(cfg)
        metrics_path = os.path.join(out_dir, "metrics.csv")
        emit_csv(result.rows, metrics_path)
        grid = sorted(set(result.tiers) | set(_SWEEP_EXTRA))
        sweep_csv(result, grid, gtest, os.path.join(out_dir, "sweep.csv"))
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO

    if not args.quiet:
        if result.rows:
            last_round = result.rows[-1].round
            final = [r for r in result.rows if r.round == last_round]
            accs = ", ".join(f"{r.tier:g}: {r.global_acc:.4f}" for r in final)
            mean = float(np.mean([r.global_acc for r in final]))
            print(f"{cfg.method}: {cfg.rounds} rounds done")
            print(f"final global accuracy by tier  {accs}  (mean {mean:.4f})")
        else:
            print(f"{cfg.method}: 0 rounds requested, nothing trained")
        print(f"wrote {metrics_path}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return EXIT_CONFIG  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
