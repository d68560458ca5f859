"""Structured logging helpers."""

from __future__ import annotations

import json
import logging
import logging.config
from datetime import datetime, timezone
from typing import Any, Dict

import numpy as np

from .config import RunSettings

_STANDARD_ATTRS = {
    "name",
    "levelno",
    "levelname",
    "pathname",
    "filename",
    "module",
    "exc_info",
    "exc_text",
    "stack_info",
    "lineno",
    "funcName",
    "msg",
    "args",
    "created",
    "msecs",
    "relativeCreated",
    "thread",
    "threadName",
    "processName",
    "process",
    "taskName",
    "message",
    "asctime",
}

ROOT_LOGGER = "exciton_nmqj"
BATH_LOGGER = "exciton_nmqj.bath"
ENGINE_LOGGERS = ("exciton_nmqj.tcl", "exciton_nmqj.nmqj")


def _json_safe(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


class JsonFormatter(logging.Formatter):
    """Minimal JSON formatter for structured logs."""

    def format(self, record: logging.LogRecord) -> str:  # noqa: D401
        base: Dict[str, Any] = {
            "ts": datetime.now(tz=timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        if record.exc_info:
            base["exc_info"] = self.formatException(record.exc_info)
        if record.stack_info:
            base["stack"] = self.formatStack(record.stack_info)
        for key, value in record.__dict__.items():
            if key.startswith("_") or key in _STANDARD_ATTRS:
                continue
            base[key] = _json_safe(value)
        return json.dumps(base, ensure_ascii=False, default=str)


def configure_logging(settings: RunSettings) -> None:
    """Configure global logging based on the provided settings."""

    level = settings.log_level.upper()
    bath_level = (settings.bath_log_level or settings.log_level).upper()
    engine_level = (settings.engine_log_level or settings.log_level).upper()
    if settings.log_format == "json":
        formatter = {"()": f"{__name__}.JsonFormatter"}
    else:
        formatter = {
            "format": "%(asctime)s | %(levelname)s | %(name)s | %(message)s",
            "datefmt": "%Y-%m-%dT%H:%M:%S%z",
        }

    loggers: Dict[str, Dict[str, Any]] = {
        ROOT_LOGGER: {"level": level, "handlers": ["console"], "propagate": False},
        BATH_LOGGER: {"level": bath_level, "handlers": ["console"], "propagate": False},
        "exciton_nmqj.scenarios": {"level": level, "handlers": ["console"], "propagate": False},
        "exciton_nmqj.cli": {"level": level, "handlers": ["console"], "propagate": False},
    }
    for name in ENGINE_LOGGERS:
        loggers[name] = {"level": engine_level, "handlers": ["console"], "propagate": False}

    logging.config.dictConfig(
        {
            "version": 1,
            "disable_existing_loggers": False,
            "formatters": {
                "default": formatter,
            },
            "handlers": {
                "console": {
                    "class": "logging.StreamHandler",
                    "formatter": "default",
                    "level": "DEBUG",
                    "stream": "ext://sys.stderr",
                }
            },
            "loggers": loggers,
            "root": {"level": level, "handlers": ["console"]},
        }
    )


def get_logger(name: str) -> logging.Logger:
    """Return a namespaced logger for the requested subsystem."""

    return logging.getLogger(name)
