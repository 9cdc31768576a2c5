"""
Command-line entry point

    shotperc <experiment> --config <file> [--set key=value]... --seed <u64> --out <path>
             [--threads n] [--log-level LEVEL]

Exit codes: 0 success, 2 invalid configuration, 3 numerical inconsistency or
geometry violation, 1 anything else.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .config import ExperimentKind, load_config, settings
from .errors import ConfigError, GeometryError, NumericalConsistencyError
from .experiments import run_experiment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shotperc",
        description="Shot noise percolation experiments: run one, write a CSV report.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  shotperc covariance_oracle --out cov.csv
  shotperc coupling_rate --config configs/coupling_rate.toml --seed 12345 --out rate.csv
  shotperc kesten --set 'lambdas=[64]' --set 'R=[8.0]' --threads 8 --out kesten.csv
""",
    )
    parser.add_argument(
        "experiment", choices=[k.value for k in ExperimentKind], help="experiment to run"
    )
    parser.add_argument("--config", type=Path, default=None, help="TOML experiment config")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config value (TOML syntax, dotted keys); repeatable",
    )
    parser.add_argument("--seed", type=int, default=None, help="64-bit experiment seed")
    parser.add_argument("--out", type=Path, default=None, help="CSV report path")
    parser.add_argument("--threads", type=int, default=None, help="worker threads")
    parser.add_argument(
        "--log-level",
        default=settings.log_level,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        type=str.upper,
        help="log level (default from SHOTPERC_LOG_LEVEL, else INFO)",
    )
    parser.add_argument("--version", action="version", version=f"shotperc {__version__}")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(
            args.config,
            args.overrides,
            experiment=args.experiment,
            flags={"seed": args.seed, "output": args.out, "threads": args.threads},
        )
        run_experiment(cfg)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except (NumericalConsistencyError, GeometryError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_NUMERICAL
    except Exception as e:
        logger.exception(f"{args.experiment} failed: {e}")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
