"""Command-line experiment runner.

Exit codes: 0 on success, 2 on configuration errors, 3 on solver hard
errors. Results land in the output directory as one CSV per experiment
plus a JSON run manifest.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, SolverError
from .experiments import (
    EXPERIMENT_NAMES,
    ExperimentSpec,
    desk_config,
    full_scale_config,
    run_and_write,
)
from .scene import SystemConfig

__all__ = ["main", "entry"]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aircomp",
        description="Multi-cell over-the-air computation experiments with "
                    "movable dual-polarized arrays",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment and write CSV + manifest")
    run.add_argument("--config", help="JSON system configuration file")
    run.add_argument("--experiment", required=True,
                     help=f"one of: {', '.join(EXPERIMENT_NAMES)}")
    run.add_argument("--seed", type=int, default=0, help="master seed (64-bit)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--full-scale", action="store_true",
                     help="simulation-scale defaults (three cells of eight users)")
    run.add_argument("--scheme", default="all", choices=["dpma", "ma", "fpa", "all"],
                     help="which schemes to run where the experiment allows a choice")
    run.add_argument("--drops", type=int, default=None,
                     help="drops per sweep point (default 10)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = SystemConfig.from_json(args.config)
        else:
            cfg = full_scale_config(args.seed) if args.full_scale else desk_config(args.seed)
        schemes = ("dpma", "ma", "fpa") if args.scheme == "all" else (args.scheme,)
        spec = ExperimentSpec.default_for(
            args.experiment, seed=args.seed, full_scale=args.full_scale,
            schemes=schemes, n_drops=args.drops, out_dir=args.out,
        )
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    try:
        csv_path, manifest_path, rows = run_and_write(spec, cfg, args.out)
    except SolverError as exc:
        where = "" if exc.iteration is None else f" (outer round {exc.iteration})"
        print(f"solver error{where}: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    print(f"wrote {len(rows)} rows to {csv_path}")
    print(f"manifest: {manifest_path}")
    return 0


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
