"""Command-line interface: ``iplearn <command> --config run.json [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence

from .._errors import IplError
from ._config import METHODS, ExperimentConfig
from ._run import Pipeline, run_experiment, sweep

logger = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="Experiment configuration (JSON).")
    parser.add_argument("--seed", type=int, default=None, help="Override the configuration seed.")
    parser.add_argument("--out", default=None, help="Override the output directory.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iplearn",
        description="Preference-based offline RL without a reward model: experiments and oracles.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG.")
    commands = parser.add_subparsers(dest="command", required=True)

    _add_common(commands.add_parser("gen-env", help="Generate and save the environment."))
    _add_common(commands.add_parser("gen-data", help="Generate the environment and the datasets."))
    train = commands.add_parser("train", help="Run the full pipeline for one configuration.")
    _add_common(train)
    train.add_argument("--variant", choices=METHODS, default=None, help="Override the configured method.")
    _add_common(commands.add_parser("oracle", help="Solve for the oracle reward of the generated data."))
    run_sweep = commands.add_parser("sweep", help="Run every configuration of the sweep section.")
    _add_common(run_sweep)
    run_sweep.add_argument("--workers", type=int, default=1, help="Parallel worker processes.")

    compare = commands.add_parser("compare", help="Summarize finished runs.")
    compare.add_argument("run_dirs", nargs="+", help="Run directories holding summary.json.")
    compare.add_argument("--value", default="best_return", help="Summary column to aggregate.")
    compare.add_argument("--out", default=None, help="Also write the table as CSV to this path.")
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "variant", None) is not None:
        changes["method"] = args.variant
    return config.replace(**changes) if changes else config


def _compare(args: argparse.Namespace) -> int:
    try:
        from ._compare import compare_runs
    except ImportError:
        print("error: 'compare' needs pandas; install it with: pip install iplearn[analysis]", file=sys.stderr)
        return 1
    table = compare_runs(args.run_dirs, value=args.value)
    print(f"# {args.value}: best evaluation checkpoint per run, mean and population std across seeds")
    print(table.to_string(index=False))
    if args.out is not None:
        table.to_csv(args.out, index=False)
    missing = table.attrs.get("missing", [])
    for run_dir in missing:
        print(f"missing: {run_dir}", file=sys.stderr)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns the process exit status.

    0 success, 1 other errors, 2 configuration errors, 3 training
    divergence, 4 oracle failures.
    """
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s: %(message)s")

    if args.command == "compare":
        return _compare(args)
    try:
        config = _load(args)
        logger.info("config %s (hash %s), command %s", config.name, config.config_hash, args.command)
        if args.command == "sweep":
            results = sweep(config, args.out, max_workers=args.workers)
            for run_dir, code, message in results:
                print(f"{code}\t{run_dir}\t{message}")
            return max((code for _, code, _ in results), default=0)
        if args.command == "train":
            result = run_experiment(config, args.out)
            print(result.run_dir)
            return 0
        pipeline = Pipeline(config, args.out)
        if args.command == "gen-env":
            pipeline.env()
        elif args.command == "gen-data":
            pipeline.data()
        else:
            pipeline.oracle()
        print(pipeline.run_dir)
        return 0
    except IplError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
