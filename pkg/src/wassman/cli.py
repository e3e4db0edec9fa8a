"""Command line front end: validate configs, run experiments.

Exit codes: 0 success, 2 bad config, 3 numeric/runtime failure inside an
experiment.
"""

from __future__ import annotations

import argparse
import sys

from . import config as config_mod
from . import experiments
from .errors import ConfigError, WassmanError


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wassman",
                                description="batch experiments over measure families")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment config")
    run_p.add_argument("config", help="path to JSON config")
    run_p.add_argument("--threads", type=int, default=1, metavar="K",
                       help="worker threads for independent tasks (default 1)")
    run_p.add_argument("--out", default=None, metavar="DIR",
                       help="override the config's output directory")
    run_p.add_argument("--svg", action="store_true",
                       help="also render an SVG per CSV panel")

    val_p = sub.add_parser("validate", help="check a config and exit")
    val_p.add_argument("config", help="path to JSON config")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = config_mod.load(args.config,
                              out_dir=getattr(args, "out", None))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(f"ok: {cfg.experiment} (hash {cfg.config_hash()})")
        return 0

    if args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        manifest = experiments.run(cfg, threads=args.threads, svg=args.svg)
    except WassmanError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3
    for name in sorted(manifest.files):
        print(f"wrote {cfg.out_dir}/{name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
