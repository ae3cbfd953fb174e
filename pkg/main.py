#!/usr/bin/env python3
"""
sphevar - directional variational inference on the hypersphere

Subcommands:
    theory            vMF noise-model checks against Monte-Carlo estimates
    student-teacher   learned sigma_eff against noise level, dimension and sample size
    train             noisy normalized classifier (optionally against a baseline)
    landscape         loss landscape of a trained layer against the vMF prediction
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

# Add src to path
sys.path.append(str(Path(__file__).parent / 'src'))

from src.cli.commands import run_command
from src.cli.run_config import COMMAND_OPTIONS, COMMON_OPTIONS, add_options

# Load .env file
load_dotenv()

LOG_LEVEL = os.getenv('SPHEVAR_LOG_LEVEL', 'INFO')
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Configure logging
logging.basicConfig(level=getattr(logging, LOG_LEVEL.upper(), logging.INFO), format=LOG_FORMAT)
logger = logging.getLogger(__name__)

DESCRIPTIONS = {
    'theory': 'Compare the vMF noise model with Monte-Carlo estimates over a kappa grid',
    'student-teacher': 'Fit noisy linear students to a linear teacher and sweep one variable',
    'train': 'Train a noisy normalized classifier and report calibration',
    'landscape': 'Probe the loss landscape of a trained layer',
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='sphevar',
        description='Directional variational inference with von Mises-Fisher weight noise'
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    for command, options in COMMAND_OPTIONS.items():
        sub = subparsers.add_parser(command, help=DESCRIPTIONS[command], description=DESCRIPTIONS[command])
        sub.add_argument('--config', help='JSON or YAML file with option values')
        sub.add_argument('--verbose', action='store_true', help='Enable verbose logging')
        add_options(sub, COMMON_OPTIONS)
        add_options(sub, options)
    return parser


def main(argv=None) -> int:
    """Main application entry point"""
    args = build_parser().parse_args(argv)

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    logger.debug(f"sphevar {args.command}")
    return run_command(args.command, args)


if __name__ == "__main__":
    sys.exit(main())
