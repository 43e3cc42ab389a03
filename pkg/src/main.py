"""Command-line entry point of the tariff experimentation toolkit."""
import argparse
import logging
import sys
from typing import List, Optional, Sequence

import pandas as pd

from src.config import ExperimentConfig
from src.errors import TariffToolkitError
from src.experiment import ExperimentRunner

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "train", "evaluate", "allocate", "sweep", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m src",
        description="Simulate tariff response, train load forecasters and benchmark tariff allocation.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="root seed")
    parser.add_argument("--tin-size", type=int, help="historical profile set size (default: every configured size)")
    parser.add_argument("--variant", help="model variant tag (default: every configured variant)")
    parser.add_argument("--replicate", type=int, help="model seed index (default: every replicate)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--progress", action="store_true", help="show progress bars")
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    config = config.with_overrides(seed=args.seed, output_dir=args.out, show_progress=args.progress or None)
    if args.variant is not None:
        config = config.with_overrides(variants=(args.variant,))
    if args.tin_size is not None and args.command == "simulate":
        config = config.with_overrides(t_in_sizes=(args.tin_size,))
    config.validate()
    return config


def _print_frame(title: str, frame: pd.DataFrame) -> None:
    print(f"\n{title}")
    print(frame.to_string(index=False) if not frame.empty else "(no rows)")


def run(args: argparse.Namespace) -> int:
    """Dispatch one command; returns the process exit code."""
    config = load_config(args)
    runner = ExperimentRunner(config)
    sizes = [args.tin_size] if args.tin_size is not None else list(config.t_in_sizes)
    replicates = [args.replicate] if args.replicate is not None else list(range(config.replicates))

    if args.command == "simulate":
        for directory in runner.cmd_simulate():
            print(directory)
    elif args.command == "train":
        for k in sizes:
            for variant in config.model_variants:
                for replicate in replicates:
                    print(runner.cmd_train(k, variant, replicate))
    elif args.command == "evaluate":
        frames = [runner.cmd_evaluate(k, replicate) for k in sizes for replicate in replicates]
        _print_frame("Average quantile loss", pd.concat(frames, ignore_index=True))
    elif args.command == "allocate":
        frames = [runner.cmd_allocate(k, replicate) for k in sizes for replicate in replicates]
        _print_frame("Allocation gains (percent vs FC uses |G_FC| as denominator)",
                     pd.concat(frames, ignore_index=True))
    elif args.command == "sweep":
        runner.cmd_sweep()
        _print_frame("Failed cells", pd.DataFrame(runner.failures, columns=["cell", "message"]))
    else:
        tables = runner.cmd_report()
        _print_frame("AQL by historical set size", tables["aql_vs_tin.csv"])
        _print_frame("Trend checks", tables["trend_checks.csv"])
    return 1 if runner.failures else 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns 0 on success and 1 on any failure."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except TariffToolkitError as error:
        logger.error("%s failed: %s", args.command, error)
        return 1


if __name__ == "__main__":
    sys.exit(main())
