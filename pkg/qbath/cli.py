"""
Command line entry point.

    qbath correlations --config exp.toml --out out/
    qbath simulate     --config exp.toml --seed 7 --shots 200000
    qbath reconstruct  --config exp.toml [--records out/records]
    qbath validate     --config exp.toml [--tensor out/reconstructed.csv]
    qbath pipeline     --config exp.toml

Exit codes: 0 success, 2 invalid input, 3 numerical invariant violated, 4 I/O failure.
"""

import argparse
import logging
import sys
from typing import Optional, Sequence

from . import __version__
from .Config import Config
from .errors import NumericalInvariantError, QBathError
from .experiment import load_experiment, parse_shots
from .pipeline import BathCharacterization

logger = logging.getLogger("qbath")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

COMMANDS = ("correlations", "simulate", "reconstruct", "validate", "pipeline")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qbath", description=__doc__.splitlines()[1])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="Experiment TOML file")
        cmd.add_argument("--out", help="Output directory (overrides [output] dir)")
        cmd.add_argument("--seed", type=int, help="Override protocol seed")
        cmd.add_argument("--mode", choices=["exact_unitary", "first_order"], help="Measurement channel model")
        cmd.add_argument("--shots", help="Shots per variant, or 'inf' for noise-free G")
        cmd.add_argument("--threads", type=int, help="Worker threads")
        cmd.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
        if name == "reconstruct":
            cmd.add_argument("--records", help="Directory of .qbr records (default <out>/records)")
        if name == "validate":
            cmd.add_argument("--tensor", help="Correlation tensor (.csv or .json) to predict from")
    return parser


def _run(args) -> None:
    overrides = {"THREADS": args.threads} if args.threads else None
    config = Config(overrides)
    shots = parse_shots(args.shots) if args.shots is not None else None
    experiment = load_experiment(args.config).with_overrides(args.seed, args.mode, shots, args.out)
    run = BathCharacterization(experiment, config)
    try:
        if args.command == "correlations":
            run.run_correlations()
        elif args.command == "simulate":
            run.run_simulate()
        elif args.command == "reconstruct":
            run.run_reconstruct(args.records)
        elif args.command == "validate":
            run.run_validate(args.tensor)
        else:
            run.run_all()
    finally:
        path = run.write_manifest()
        logger.info(f"Manifest written to {path}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = (args.log_level or Config()['LOG_LEVEL']).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        _run(args)
    except NumericalInvariantError as e:
        logger.error(f"Numerical invariant violated: {e}")
        return EXIT_NUMERICAL
    except QBathError as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_INPUT
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
