"""
Logging Setup
Console (colorlog) and JSON (python-json-logger) handlers for the CLI and tests
"""

import logging
import os
from typing import Optional

import colorlog
from pythonjsonlogger import jsonlogger

_CONSOLE_FORMAT = "%(log_color)s%(asctime)s %(levelname)-8s%(reset)s [%(threadName)s] %(name)s: %(message)s"
_JSON_FORMAT = "%(asctime)s %(levelname)s %(threadName)s %(name)s %(message)s"


def setup_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> None:
    """
    Configure the root logger once

    Args:
        level: Log level name; falls back to GRIDGNN_LOG_LEVEL, then INFO
        fmt: 'console' or 'json'; falls back to GRIDGNN_LOG_FORMAT, then console
    """
    level = (level or os.getenv("GRIDGNN_LOG_LEVEL") or "INFO").upper()
    fmt = (fmt or os.getenv("GRIDGNN_LOG_FORMAT") or "console").lower()

    handler = logging.StreamHandler()
    if fmt == "json":
        handler.setFormatter(jsonlogger.JsonFormatter(_JSON_FORMAT))
    else:
        handler.setFormatter(colorlog.ColoredFormatter(_CONSOLE_FORMAT, datefmt="%H:%M:%S"))

    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(level)
