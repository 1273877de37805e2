"""
Logging setup.

Library modules only call ``logging.getLogger(__name__)``; handlers are
installed here, once, by whoever owns the process (the CLI or a test).
Everything goes to stderr so stdout stays reserved for JSON.
"""
from __future__ import annotations

import logging
import sys
from typing import Optional

import orjson
from rich.console import Console
from rich.logging import RichHandler

_ROOT = "carbonforge"
_LEVELS = {
    'debug': logging.DEBUG,
    'info': logging.INFO,
    'warning': logging.WARNING,
    'error': logging.ERROR,
}


class JsonLineFormatter(logging.Formatter):
    """One JSON object per record"""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            'ts': round(record.created, 6),
            'level': record.levelname.lower(),
            'logger': record.name,
            'message': record.getMessage(),
        }
        if record.exc_info:
            payload['exc'] = self.formatException(record.exc_info)
        return orjson.dumps(payload).decode()


def configure_logging(level: str = "info", fmt: str = "pretty", console: Optional[Console] = None) -> logging.Logger:
    """Install a single stderr handler on the package logger"""
    logger = logging.getLogger(_ROOT)
    logger.setLevel(_LEVELS.get(level.lower(), logging.INFO))

    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    if fmt == "pretty":
        handler: logging.Handler = RichHandler(
            console=console or Console(stderr=True),
            show_path=False,
            rich_tracebacks=True,
        )
        handler.setFormatter(logging.Formatter("%(message)s"))
    elif fmt == "json":
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(JsonLineFormatter())
    else:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))

    logger.addHandler(handler)
    logger.propagate = False
    return logger


__all__ = ["configure_logging", "JsonLineFormatter"]
