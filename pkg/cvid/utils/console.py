"""Shared rich console and logging setup.

Library modules only call ``logging.getLogger(__name__)``; the CLI calls
``setup_logging`` once so every record goes through one RichHandler.
"""

from __future__ import annotations

import logging
import os
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

LOG_LEVEL_ENV = "CVID_LOG_LEVEL"

# Results go to stdout; diagnostics go to stderr.
console = Console(highlight=False)
err_console = Console(stderr=True, highlight=False)


def resolve_level(verbose: bool = False, quiet: bool = False) -> int:
    if quiet:
        return logging.ERROR
    if verbose:
        return logging.INFO
    name = os.environ.get(LOG_LEVEL_ENV, "WARNING").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.WARNING


def setup_logging(level: Optional[int] = None) -> logging.Logger:
    logger = logging.getLogger("cvid")
    logger.setLevel(resolve_level() if level is None else level)
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)
    handler = RichHandler(
        console=err_console, show_path=False, rich_tracebacks=True, markup=False
    )
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.propagate = False
    return logger
