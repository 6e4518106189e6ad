"""
Command-line interface for erft-lab.

    python main.py gen-data --clips 4
    python main.py train --mode erft --set steps=2000
    python main.py rollout --checkpoint runs/erft-seed0/checkpoint.erft --clips 20 --seeds 1 2 3 4 5 --out erft.csv
    python main.py ablate --drop img
    python main.py report baseline.csv erft.csv --assert-dominance erft:baseline
"""
import argparse
import logging
import sys
from typing import List, Optional, Sequence

from dotenv import load_dotenv

from core.config import parse_config, parse_overrides
from core.error_recycling import CHANNELS
from core.errors import ErftError, InvalidArgumentError
from core.evaluator import run_report
from core.experiment import export_bank_occupancy, gen_data, run_ablate, run_rollout, run_train
from core.trainer import TrainingMode

logger = logging.getLogger("erft")

EXIT_OK = 0
EXIT_DOMINANCE_FAILED = 1
EXIT_ERROR = 2


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="key=value run configuration file")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override a configuration key (repeatable)",
    )
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="Warnings only, no progress bars")
    return common


def _dominance_pair(value: str) -> List[str]:
    better, sep, worse = value.partition(":")
    if not sep or not better or not worse:
        raise argparse.ArgumentTypeError("expected BETTER:WORSE")
    return [better, worse]


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="erft", description="Error-recycling fine-tuning for flow-matching clip generators"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="Dump oracle clips to CSV")
    p.add_argument("--clips", type=int, default=4, help="Number of consecutive clips")
    p.add_argument("--out", type=str, default=None, help="Output CSV (default: <output_dir>/clips.csv)")

    p = sub.add_parser("train", parents=[common], help="Train a model")
    p.add_argument("--mode", choices=[m.value for m in TrainingMode], required=True)

    p = sub.add_parser("rollout", parents=[common], help="Autoregressive rollout from a checkpoint")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--clips", type=int, default=20, help="Clips per seed (K)")
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument("--out", type=str, required=True, help="Metrics CSV to write")

    p = sub.add_parser("ablate", parents=[common], help="Error-recycling run with channels removed")
    p.add_argument("--drop", choices=CHANNELS, nargs="+", required=True)

    p = sub.add_parser("report", parents=[common], help="Summarize metrics CSVs")
    p.add_argument("csvs", nargs="*", help="Metrics CSVs written by rollout")
    p.add_argument("--assert-dominance", type=_dominance_pair, default=None, metavar="BETTER:WORSE")
    p.add_argument("--min-wins", type=int, default=4)
    p.add_argument("--slope-ratio", type=float, default=0.5)
    p.add_argument("--out", type=str, default=None, help="Comparison CSV to write")
    p.add_argument("--bank", type=str, default=None, help="Bank snapshot whose occupancy to export")
    p.add_argument("--bank-out", type=str, default=None, help="Occupancy CSV (default: <bank>.occupancy.csv)")
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s - %(levelname)s - %(message)s", force=True)


def _report(args: argparse.Namespace) -> int:
    if not args.csvs and not args.bank:
        raise InvalidArgumentError("report needs metrics CSVs or --bank")
    if args.bank:
        out = args.bank_out or f"{args.bank}.occupancy.csv"
        export_bank_occupancy(args.bank, out)
        print(f"Bank occupancy written to {out}")
    if not args.csvs:
        return EXIT_OK
    text, _, dominance = run_report(
        args.csvs,
        dominance=args.assert_dominance,
        min_wins=args.min_wins,
        slope_ratio=args.slope_ratio,
        comparison_out=args.out,
    )
    print(text)
    if dominance is not None and not dominance.holds:
        return EXIT_DOMINANCE_FAILED
    return EXIT_OK


def run(args: argparse.Namespace) -> int:
    if args.command == "report":
        return _report(args)

    config = parse_config(args.config, parse_overrides(args.overrides))
    progress = not args.quiet
    if args.command == "gen-data":
        path = gen_data(config, args.clips, args.out)
        print(f"Clips written to {path}")
    elif args.command == "train":
        artifacts = run_train(config, args.mode, progress=progress)
        print(f"Checkpoint written to {artifacts.checkpoint} (final loss {artifacts.summary.loss_final})")
    elif args.command == "ablate":
        artifacts = run_ablate(config, args.drop, progress=progress)
        print(f"Checkpoint written to {artifacts.checkpoint} (final loss {artifacts.summary.loss_final})")
    elif args.command == "rollout":
        path = run_rollout(config, args.checkpoint, args.clips, args.seeds, args.out)
        print(f"Metrics written to {path}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run a subcommand and return the process exit code.

    Exit codes: 0 success, 1 dominance check failed, 2 any other error.
    """
    load_dotenv()
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        return run(args)
    except (ErftError, OSError) as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
