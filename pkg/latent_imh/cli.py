"""Command-line entry point: run, report-kl and validate experiment configs"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from latent_imh import __version__
from latent_imh.config import Settings, load_config, with_overrides
from latent_imh.exceptions import LatentImhError
from latent_imh.experiment import ExperimentRunner

logger = logging.getLogger(__name__)

LOG_FORMAT = "[%(levelname)s] %(asctime)s - %(name)s - %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latent-imh",
        description="Latent-IMH and Approx-IMH sampling experiments for linear inverse problems",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run the samplers of a config and write metric series")
    run.add_argument("config", help="Path to the JSON experiment config")
    run.add_argument("--seed", type=int, help="Override the master seed")
    run.add_argument("--output-dir", help="Override the output directory")
    run.add_argument("--dump-samples", action="store_true", help="Write raw float64 samples per chain")
    run.add_argument("--chains", type=int, help="Override the number of chains")

    report = sub.add_parser("report-kl", help="Write the expected-KL report of a Gaussian-prior problem")
    report.add_argument("config", help="Path to the JSON experiment config")
    report.add_argument("--seed", type=int, help="Override the master seed")
    report.add_argument("--output-dir", help="Override the output directory")

    validate = sub.add_parser("validate", help="Check a config against the schema without running it")
    validate.add_argument("config", help="Path to the JSON experiment config")

    for p in (run, report, validate):
        p.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Returns 0 on success and 1 when any error surfaced"""
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)

    try:
        config = load_config(args.config)
        if args.command == "validate":
            logger.info(f"✅ {args.config} is a valid config")
            return 0

        config = with_overrides(
            config,
            seed=args.seed,
            output_dir=args.output_dir,
            dump_samples=True if getattr(args, "dump_samples", False) else None,
            n_chains=getattr(args, "chains", None),
        )
        runner = ExperimentRunner(config, Settings())
        if args.command == "report-kl":
            print(json.dumps(runner.report_kl(), indent=2, sort_keys=True))
        else:
            runner.run()
        return 0
    except (LatentImhError, ValidationError) as e:
        logger.error(f"❌ {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
