from __future__ import annotations

import logging
import sys

from demest.cli import parse_and_validate
from demest.commands import run
from demest.config import Config


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%H:%M:%S",
    )


def main(argv: list[str] | None = None) -> int:
    args = parse_and_validate(argv)
    config = Config.from_args(args)
    setup_logging(config.log_level)
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
