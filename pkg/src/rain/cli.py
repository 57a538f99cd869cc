"""
Command-line entry point.

Usage:
    # Generate a desk-scale dataset
    rain simulate --out data --train 1000 --val 500 --test 500 --seed 7

    # Pretrain, then run the formal stage (resumes from the last epoch)
    rain train --data data --run runs/a --stage all

    # One ablation on an existing run
    rain train --data data --run runs/a --ablation supervised

    # Hybrid evaluation with dynamic re-inference every 2 steps
    rain evaluate --data data --run runs/a --mode dynamic --tau 2
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .config import RunConfig
from .config.env import env_log_level, env_seed, load_env_file
from .dataset.operations import DatasetHandle, generate_dataset
from .errors import MissingPrerequisiteError, RainError, UsageError
from .pipeline import RunDirectory, run_ablation, run_all, run_evaluation, run_seeds
from .utils.constants import RUN_CONFIG_FILE, Ablation, ExitCode

logger = logging.getLogger("rain")


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as ``UsageError``."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, metavar="FILE", help="key=value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, help="run seed (falls back to RAIN_SEED)")
    parser.add_argument("--full-scale", action="store_true", help="full-size splits and epochs")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    parser.add_argument("--quiet", action="store_true", help="warnings only, no progress bars")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rain", description="Hybrid-attention motion forecasting on particle systems")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="generate a particle dataset")
    _common(simulate)
    simulate.add_argument("--out", type=Path, required=True, help="dataset directory")
    simulate.add_argument("--train", type=int, help="training cases")
    simulate.add_argument("--val", type=int, help="validation cases")
    simulate.add_argument("--test", type=int, help="test cases")
    simulate.add_argument("--workers", type=int, help="simulation processes")

    train = commands.add_parser("train", help="run training stages or an ablation")
    _common(train)
    train.add_argument("--data", type=Path, required=True, help="dataset directory")
    train.add_argument("--run", type=Path, required=True, help="run directory")
    train.add_argument("--stage", choices=("pretrain", "formal", "all"), default="all")
    train.add_argument("--ablation", choices=Ablation.ALL, help="evaluate one ablation instead of training")
    train.add_argument("--seeds", help="comma-separated seeds, one full run each (train.seeds)")

    evaluate = commands.add_parser("evaluate", help="evaluate a trained run on the test split")
    _common(evaluate)
    evaluate.add_argument("--data", type=Path, required=True, help="dataset directory")
    evaluate.add_argument("--run", type=Path, required=True, help="run directory")
    evaluate.add_argument("--mode", choices=("static", "dynamic"))
    evaluate.add_argument("--tau", type=int, help="re-inference interval in dynamic mode")
    return parser


def _overrides(pairs: Sequence[str]) -> Dict[str, str]:
    values = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set expects KEY=VALUE, got '{pair}'")
        key, value = pair.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def resolve_config(args: argparse.Namespace, base: Optional[RunConfig] = None) -> RunConfig:
    """Layer the config file, ``--set`` pairs and explicit flags over ``base`` or the defaults."""
    if base is None:
        config = RunConfig.layered(args.full_scale, args.config, _overrides(args.set))
    else:
        config = base
        if args.config is not None:
            config = RunConfig.layered(args.full_scale, args.config)
        config.update(_overrides(args.set))

    flags = {"run.command": args.command}
    seed = args.seed if args.seed is not None else env_seed()
    if seed is not None:
        flags["train.seed"] = str(seed)
    for flag, key in (("train", "run.n_train"), ("val", "run.n_val"), ("test", "run.n_test"),
                      ("workers", "run.workers"), ("mode", "eval.mode"), ("tau", "eval.tau"),
                      ("seeds", "train.seeds")):
        value = getattr(args, flag, None)
        if value is not None:
            flags[key] = str(value)
    for flag, key in (("out", "run.data"), ("data", "run.data"), ("run", "run.dir")):
        value = getattr(args, flag, None)
        if value is not None:
            flags[key] = str(value)
    config.update(flags)
    config.validate()
    return config


def _with_dataset_sim(config: RunConfig, dataset: DatasetHandle) -> RunConfig:
    """Take the particle settings from the dataset manifest; generator horizons follow them."""
    sim, gen = dataset.config, config.gen
    tau = sim.future_steps if gen.tau == gen.horizon else min(gen.tau, sim.future_steps)
    gen = replace(gen, burn_in=sim.history_steps, horizon=sim.future_steps, tau=tau)
    config = replace(config, sim=sim, gen=gen)
    config.validate()
    return config


def cmd_simulate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    run = config.run
    handle = generate_dataset(config.sim, run.n_train, run.n_val, run.n_test, config.train.seed,
                              args.out, run.workers)
    config.write(handle.path / "config.txt")
    logger.info(f"Dataset ready at {handle.path}")
    return ExitCode.OK


def cmd_train(args: argparse.Namespace) -> int:
    dataset = DatasetHandle.open(args.data)
    config_file = args.run / RUN_CONFIG_FILE
    base = RunConfig.read(config_file) if (args.ablation and config_file.exists()) else None
    config = _with_dataset_sim(resolve_config(args, base), dataset)
    run_dir = RunDirectory.for_config(args.run, config)
    progress = not args.quiet

    if args.ablation:
        if not run_dir.path.is_dir():
            raise MissingPrerequisiteError(f"run directory {run_dir.path} does not exist")
        run_ablation(args.ablation, dataset, config, run_dir, progress)
    elif config.train.seeds:
        run_seeds(dataset, config, run_dir, config.train.seeds, progress)
    else:
        run_all(dataset, config, run_dir, args.stage, progress)
    return ExitCode.OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    config_file = args.run / RUN_CONFIG_FILE
    if not config_file.exists():
        raise MissingPrerequisiteError(f"{args.run} is not a run directory (no {RUN_CONFIG_FILE})")
    dataset = DatasetHandle.open(args.data)
    config = _with_dataset_sim(resolve_config(args, RunConfig.read(config_file)), dataset)
    run_dir = RunDirectory.for_config(args.run, config)
    run_evaluation(dataset, config, run_dir, config.eval.mode, config.eval.tau)
    return ExitCode.OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
}


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else env_log_level()
    logging.basicConfig(
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s", level=level, force=True
    )
    for handler in logging.getLogger().handlers:
        handler.setLevel(level)


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    load_env_file()
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.verbose, args.quiet)
        return int(COMMANDS[args.command](args))
    except RainError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return int(e.exit_code)


if __name__ == "__main__":
    sys.exit(main())
