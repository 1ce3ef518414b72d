"""Command line entry point: ``sobolev-gd <mode> [--config PATH] [--seed S] [--out-dir DIR] [--threads K]``.

Exit status is 0 when every verdict of the run passes, 1 when one fails and
2 on a configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import MODES, ConfigError, default_config, load_config, run_experiment

log = logging.getLogger("sobolev_gd")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sobolev-gd",
        description="Spectral experiments for early-stopped averaged gradient descent.",
    )
    sub = parser.add_subparsers(dest="mode", required=True, metavar="MODE")
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run the {mode} experiment")
        p.add_argument("--config", type=Path, help="JSON config (defaults to the built-in one)")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
        p.add_argument("--print-config", action="store_true",
                       help="print the resolved config and exit")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config, args.mode) if args.config else default_config(args.mode)
        if args.seed is not None:
            config = config.with_seed(args.seed)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        print(config.to_json())
        return 0
    if args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        report = run_experiment(config, out_dir=args.out_dir, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for name, ok in report.verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    for path in report.files:
        log.info("wrote %s", path)
    print(json.dumps({"mode": report.mode, "passed": report.passed}))
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
