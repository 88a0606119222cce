"""
Command-line interface.

Usage::

    sbnn [--config PATH] [--seed U64] [--threads N] [--out DIR] [--verbose] COMMAND ...

Commands: simulate, calibrate, sample-prior, infer, krige, diagnose, score,
make-dataset. Exit codes: 0 success, 2 configuration or argument error,
3 numerical failure, 4 format or unsupported-variant error, 5 I/O error.
"""

import argparse
import logging
import torch

from typing import List, Optional

from src.core.exceptions import (
    CheckpointIOError,
    ConfigError,
    FormatError,
    InsufficientDataError,
    InvalidArgumentError,
    NumericalFailureError,
    UnsupportedVariantError,
)
from src.utils import commands
from src.utils.config import THREADS_ENV, RunConfig, load_config
from src.utils.data_writer import DataWriter

_logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_FORMAT = 4
EXIT_IO = 5

_EXIT_CODES = (
    ((ConfigError, InvalidArgumentError), EXIT_CONFIG),
    ((NumericalFailureError,), EXIT_NUMERICAL),
    ((FormatError, UnsupportedVariantError, InsufficientDataError), EXIT_FORMAT),
    ((CheckpointIOError, OSError), EXIT_IO),
)


def exit_code(error: BaseException) -> int:
    for types, code in _EXIT_CODES:
        if isinstance(error, types):
            return code
    raise error


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbnn", description="Calibrate and use spatial Bayesian neural network priors.")
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument("--seed", type=int, help="root seed, overrides the configuration")
    parser.add_argument("--threads", type=int, help=f"worker threads, overrides {THREADS_ENV}")
    parser.add_argument("--out", help="output directory, overrides the configuration")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="simulate target realisations")
    simulate.add_argument("--count", type=int)

    sub.add_parser("calibrate", help="calibrate the prior to the target")

    sample = sub.add_parser("sample-prior", help="draw fields from a calibrated prior")
    sample.add_argument("--checkpoint", required=True)
    sample.add_argument("--count", type=int)

    infer = sub.add_parser("infer", help="posterior sampling and predictive fields")
    infer.add_argument("--checkpoint", required=True)
    infer.add_argument("--dataset")

    krige = sub.add_parser("krige", help="exact Gaussian conditioning of the target")
    krige.add_argument("--dataset")
    krige.add_argument("--count", type=int)

    diagnose = sub.add_parser("diagnose", help="covariograms, maps, densities and exceedance curves")
    diagnose.add_argument("inputs", nargs="+", help="realisation files or checkpoints")

    score = sub.add_parser("score", help="MAPE, RMSPE and CRPS of predictive draws")
    score.add_argument("--draws", required=True)
    score.add_argument("--truth", required=True)

    dataset = sub.add_parser("make-dataset", help="simulate a noisy observation dataset")
    dataset.add_argument("--observations", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Apply command-line overrides on top of the environment and the document."""
    config = load_config(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError(f"Seed must be an unsigned 64-bit integer, got {args.seed}")
        config = config.replace(seed=args.seed)
    if args.out is not None:
        config = config.replace(output=args.out)
    if args.threads is not None and args.threads < 1:
        raise ConfigError(f"Thread count must be positive, got {args.threads}")
    threads = args.threads or config.env_threads() or config.threads or 1
    return config.replace(threads=threads)


def run(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    threads = config.threads
    torch.set_num_threads(threads)
    writer = DataWriter(config.output)
    _logger.info("Running %s with seed %d on %d threads", args.command, config.seed, threads)

    if args.command == "simulate":
        commands.cmd_simulate(config, writer, args.count)
    elif args.command == "calibrate":
        commands.cmd_calibrate(config, writer)
    elif args.command == "sample-prior":
        commands.cmd_sample_prior(config, writer, args.checkpoint, args.count)
    elif args.command == "infer":
        commands.cmd_infer(config, writer, args.checkpoint, args.dataset)
    elif args.command == "krige":
        commands.cmd_krige(config, writer, args.dataset, args.count)
    elif args.command == "diagnose":
        commands.cmd_diagnose(config, writer, args.inputs)
    elif args.command == "score":
        commands.cmd_score(config, writer, args.draws, args.truth)
    elif args.command == "make-dataset":
        commands.cmd_make_dataset(config, writer, args.observations)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse ``argv``, run the command and map domain errors to exit codes.

    Returns:
        int: Process exit status.
    """
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        run(args)
    except (ConfigError, InvalidArgumentError, NumericalFailureError, FormatError,
            UnsupportedVariantError, InsufficientDataError, OSError) as e:
        _logger.error("%s failed: %s", args.command, e)
        return exit_code(e)
    return EXIT_OK
