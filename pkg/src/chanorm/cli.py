"""Command line: ``chanorm run --config cfg.yaml`` and ``chanorm report --in DIR``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .experiments import ExperimentConfig
from .report import ensure_writable, report, run_experiment

log = logging.getLogger("chanorm")


def load_config(path, *, trials=None, seed=None, out=None) -> ExperimentConfig:
    """Read a flat YAML mapping of config fields; command-line overrides win."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a key/value mapping at the top level")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    for key, value in (("trials", trials), ("seed", seed), ("output_dir", out)):
        if value is not None:
            data[key] = value
    return ExperimentConfig.from_mapping(data)


def _cmd_run(args) -> int:
    cfg = load_config(args.config, trials=args.trials, seed=args.seed, out=args.out)
    if cfg.output_dir is None:
        raise SystemExit("no output directory: set output_dir in the config or pass --out")
    ensure_writable(cfg.output_dir)
    log.info("running %d %s trial(s) of %d ticks into %s", cfg.trials, cfg.scenario, cfg.max_ticks, cfg.output_dir)
    for p in run_experiment(cfg):
        print(p)
    return 0


def _cmd_report(args) -> int:
    for p in report(args.input):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chanorm", description="Norm emergence experiments at a grid intersection.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the trials of one scenario and write traces plus summaries")
    run.add_argument("--config", required=True, help="YAML file with ExperimentConfig fields")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.set_defaults(func=_cmd_run)

    rep = sub.add_parser("report", help="recompute summary CSVs from the raw traces of a run")
    rep.add_argument("--in", dest="input", required=True)
    rep.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, PermissionError, FileNotFoundError) as exc:
        print(f"chanorm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
