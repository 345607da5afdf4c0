"""Command-line entry point: ``tvmpo run | resume | compare``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import parse_config
from .errors import TvmpoError
from .record import TrajectoryRecord
from .runner import compare, resume, run


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvmpo", description="Variational Monte Carlo dynamics of open spin lattices.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configuration")
    p_run.add_argument("--config", required=True, help="YAML run configuration")
    p_run.add_argument("--output-dir", help="override output_dir")
    p_run.add_argument("--seed", type=int, help="override seed")
    p_run.add_argument("--workers", type=int, help="override the number of workers")
    p_run.add_argument("--backend", choices=("vmc", "exact", "meanfield"), help="override backend")

    p_res = sub.add_parser("resume", help="continue a variational run from its latest checkpoint")
    p_res.add_argument("--output-dir", required=True, help="directory of the interrupted run")

    p_cmp = sub.add_parser("compare", help="compare two finished runs")
    p_cmp.add_argument("run_a")
    p_cmp.add_argument("run_b")
    p_cmp.add_argument("--tolerance", type=float, default=0.02)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = parse_config(args.config)
            if args.seed is not None and args.seed < 0:
                raise TvmpoError("--seed must be non-negative")
            cfg = cfg.with_overrides(
                output_dir=args.output_dir, seed=args.seed, workers=args.workers, backend=args.backend
            )
            rec = run(cfg)
            print(f"wrote {len(rec.times)} rows to {cfg.output_dir}")
        elif args.command == "resume":
            rec = resume(args.output_dir)
            print(f"wrote {len(rec.times)} rows to {args.output_dir}")
        else:
            report = compare(TrajectoryRecord.read(args.run_a), TrajectoryRecord.read(args.run_b), args.tolerance)
            print(report.format())
            return 0 if report.passed else 1
    except TvmpoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
