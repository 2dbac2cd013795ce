"""Entry point: ``python -m sddlogdet <command> ...``."""

from __future__ import annotations

import sys

from sddlogdet.cli.logdet_cli import main


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
