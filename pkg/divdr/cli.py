"""
Command line entrypoint.
"""

import sys
import argparse
from loguru import logger
from divdr.config import settings
from divdr.experiment import (
    SPLITS,
    ConfigError,
    cmd_eval,
    cmd_export_aspace,
    cmd_gen_data,
    cmd_motivation,
    cmd_sweep,
    cmd_train,
    load_config,
    parse_values,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def configure_logging():
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if settings.debug else settings.log_level)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divdr", description="Diversified dynamic routing experiments.")
    commands = parser.add_subparsers(dest="command", required=True)

    def _with_config(name: str, help: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help)
        sub.add_argument("--config", required=True, help="Path to the JSON experiment config.")
        sub.add_argument("--out", help="Output root (overrides the config and DIVDR_OUT).")
        sub.add_argument("--seed", type=int, help="Override the run seed.")
        sub.add_argument("--threads", type=int, default=settings.threads, help="Workers for no-grad sweeps.")
        return sub

    train = _with_config("train", "Train one run.")
    train.add_argument("--resume", action="store_true", help="Continue from the run's checkpoint.")

    sweep = _with_config("sweep", "Train one run per value of a parameter.")
    sweep.add_argument("--param", required=True, help="One of K, alpha, lambda2, lambda1.")
    sweep.add_argument("--values", required=True, help="Comma separated values.")

    _with_config("gen-data", "Generate and cache every split.")
    _with_config("motivation", "Local experts (S, L) against a global model (X).")

    for name, help in (("eval", "Evaluate a run's checkpoint."), ("export-aspace", "Export A-space and PCA CSVs.")):
        sub = commands.add_parser(name, help=help)
        sub.add_argument("run_dir", help="Run directory holding config.json and checkpoint.json.")
        sub.add_argument("--split", choices=sorted(SPLITS), default="val_x", help="Dataset split.")
        sub.add_argument("--threads", type=int, default=settings.threads, help="Workers for no-grad sweeps.")
    return parser


def run(args: argparse.Namespace):
    if args.command == "eval":
        return cmd_eval(args.run_dir, args.split, threads=args.threads)
    if args.command == "export-aspace":
        return cmd_export_aspace(args.run_dir, args.split, threads=args.threads)
    config = load_config(args.config, seed=args.seed, out=args.out)
    if args.command == "train":
        return cmd_train(config, threads=args.threads, resume=args.resume)
    if args.command == "sweep":
        return cmd_sweep(config, args.param, parse_values(args.param, args.values), threads=args.threads)
    if args.command == "gen-data":
        return cmd_gen_data(config)
    return cmd_motivation(config, threads=args.threads)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        run(args)
    except ConfigError as exc:
        logger.error(str(exc))
        return EXIT_CONFIG
    except KeyboardInterrupt:
        logger.warning("Interrupted; a resumable checkpoint was left in the run directory")
        return EXIT_RUNTIME
    except Exception as exc:
        logger.error(f"{args.command} failed: {exc}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
