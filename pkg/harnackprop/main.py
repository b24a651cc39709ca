from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from harnackprop.config import load_config
from harnackprop.errors import HarnackPropError
from harnackprop.handlers import COMMANDS
from harnackprop.handlers.common import build_context
from harnackprop.texts.help import COMMAND_HELP, DESCRIPTION, EPILOG

logger = logging.getLogger(__name__)


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=level,
        format="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="harnackprop", description=DESCRIPTION, epilog=EPILOG)
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name, text in COMMAND_HELP.items():
        command = sub.add_parser(name, help=text, description=text)
        command.add_argument("--config", type=Path, default=None, help="experiment YAML (default $HARNACKPROP_CONFIG)")
        command.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config value; repeatable",
        )
        command.add_argument("--out", type=Path, default=None, help="output directory (default $HARNACKPROP_OUT)")
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.overrides)
        setup_logging(config.log_level)
        out_dir = args.out or Path(os.getenv("HARNACKPROP_OUT", config.output.directory))
        ctx = build_context(config, out_dir)
        written = COMMANDS[args.command](ctx)
    except HarnackPropError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    for path in written:
        logger.info("Artifact %s", path)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
