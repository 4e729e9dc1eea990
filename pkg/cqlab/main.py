"""
cqlab command line.

    python -m cqlab <subcommand> --config <path> --out <dir> [--plots]
                    [--seedless-timestamps] [--workers N] [--log-level LEVEL]

Exit status is 0 iff the run succeeded and every configured check passed.
"""

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from cqlab import __version__
from cqlab.executor import HANDLERS, run_subcommand
from cqlab.logging_utils import set_level
from cqlab.models import RunStatus

EXIT_OK = 0
EXIT_FAILED_CHECKS = 1
EXIT_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cqlab",
        description="Numerical laboratory for the classical-quantum limit of two-particle quantum mechanics",
    )
    parser.add_argument("--version", action="version", version=f"cqlab {__version__}")
    parser.add_argument("subcommand", help=f"one of: {', '.join(HANDLERS)}")
    parser.add_argument("--config", required=True, type=Path, help="experiment file (TOML)")
    parser.add_argument("--out", required=True, type=Path, help="output directory")
    parser.add_argument("--plots", action="store_true", help="also write SVG plots")
    parser.add_argument(
        "--seedless-timestamps",
        action="store_true",
        help="embed creation timestamps in plots (default output is reproducible)",
    )
    parser.add_argument("--workers", type=int, default=None, help="concurrent independent runs (env CQLAB_WORKERS)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ... (env CQLAB_LOG_LEVEL)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_level(args.log_level)
    result = run_subcommand(
        args.subcommand,
        args.config,
        args.out,
        plots=args.plots,
        timestamps=args.seedless_timestamps,
        workers=args.workers,
    )
    if result.status is RunStatus.SUCCESS:
        return EXIT_OK
    if result.status is RunStatus.FAILED_CHECKS:
        print(f"{result.subcommand}: checks failed (see {args.out / 'summary.txt'})", file=sys.stderr)
        return EXIT_FAILED_CHECKS
    print(f"{result.subcommand}: {result.error.name}: {result.error.message}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
