"""
Command-line front end.

    bench run --config FILE [--seed N] [--workers W] [--out DIR] [--log-level L]
    bench bounds --config FILE [--out DIR]

Exit codes: 0 success, 1 invalid config, 2 at least one flagged cell.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from mpt.models.errors import ConfigError
from mpt.services.bench_service import run_bounds, run_experiment
from mpt.services.config_service import apply_overrides, load_experiment_config

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FLAGGED = 2

logger = logging.getLogger("mpt.cli")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="bench", description="Run planner benchmark experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run the experiment named in the config.")
    run.add_argument("--config", required=True, help="Experiment JSON file.")
    run.add_argument("--seed", type=int, default=None, help="Override masterSeed.")
    run.add_argument("--workers", type=int, default=None, help="Worker processes for grid and sweep jobs.")
    run.add_argument("--out", default=None, help="Override outputDir.")
    run.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    bounds = sub.add_parser("bounds", help="Tabulate steady-state tracking-error bounds.")
    bounds.add_argument("--config", required=True, help="Experiment JSON file with a 'bounds' section.")
    bounds.add_argument("--out", default=None, help="Override outputDir.")
    bounds.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = load_experiment_config(args.config)
        if args.command == "run":
            config = apply_overrides(config, seed=args.seed, workers=args.workers, output_dir=args.out)
        else:
            config = apply_overrides(replace(config, experiment="bounds"), output_dir=args.out)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG

    result = run_bounds(config) if args.command == "bounds" else run_experiment(config)
    if result.flagged:
        logger.warning("%d cell(s) flagged; see the log above.", result.flagged)
        return EXIT_FLAGGED
    logger.info("Results written to %s.", config.output_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
