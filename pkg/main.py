"""fourd command line: `python main.py <command> [options]`."""
import argparse
import logging
import sys
from typing import List, Optional

import config
from commands import analyze, associate, export, reconstruct, simulate, slam
from exceptions import FourDError

logger = logging.getLogger("fourd")

COMMANDS = [simulate, slam, associate, reconstruct, analyze, export]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fourd", description="4D reconstruction of crop rows from "
                                     "images, IMU and GPS collected over a growing season.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=config.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except FourDError as exc:
        logger.debug("Command failed", exc_info=True)
        print(f"❌ {type(exc).__name__}: {exc.detail}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
