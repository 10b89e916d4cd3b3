"""Command-line entry point: ``interventional <command> --config run.yaml``"""

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from interventional.config import Config, ConfigError
from interventional.exceptions import InterventionalError
from interventional.runner import RunConfig, commands, run

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    """The argument parser of the CLI"""
    parser = argparse.ArgumentParser(
        prog="interventional",
        description="Estimate interventional effects and marginal interventional effects of a binary treatment.",
    )
    parser.add_argument("command", choices=sorted(commands), help="what to run")
    parser.add_argument("--config", help="YAML file with a run section and library settings")
    parser.add_argument("--seed", type=int, help="overrides run.seed")
    parser.add_argument("--out", help="write the JSON report here (default run.output, otherwise not written)")
    parser.add_argument("--threads", type=int, help="worker threads, overrides run.threads")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="stderr logging level",
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command.

    The table goes to stdout. Failures print a single line ``error: <ErrorClass>: <message>`` to
    stderr and return a nonzero exit code.

    Args:
        argv: The command-line arguments, default sys.argv[1:]

    Returns:
        int: 0 on success, 1 on an estimation error, 2 on a configuration error
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT, stream=sys.stderr)
    try:
        if args.config:
            Config.load_config_from_file(args.config)
        run_config = RunConfig.from_config(Config, command=args.command, seed=args.seed, threads=args.threads)
        table, report = run(run_config)
    except InterventionalError as err:
        print(f"error: {err.error_class}: {err}", file=sys.stderr)
        return 1
    except (ConfigError, OSError, TypeError, ValueError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2

    print(table.render())
    output = args.out or run_config.output
    if output:
        with open(output, "w", encoding="utf-8") as stream:
            json.dump(report, stream, sort_keys=True, indent=2)
            stream.write("\n")
        logger.info("report written to %s", output)
    return 0
