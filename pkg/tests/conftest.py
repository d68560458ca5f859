import logging
import os
import sys
from pathlib import Path
from typing import Iterator

import pytest

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

_ROOT_LEVEL = logging.getLogger().level


@pytest.fixture(autouse=True)
def _clean_settings_env(monkeypatch: pytest.MonkeyPatch) -> None:
    """Keep NMQJ_* variables from the calling shell out of every test."""

    for key in list(os.environ):
        if key.startswith("NMQJ_"):
            monkeypatch.delenv(key, raising=False)


def _reset_package_loggers() -> None:
    for name, candidate in list(logging.Logger.manager.loggerDict.items()):
        if not name.startswith("exciton_nmqj") or not isinstance(candidate, logging.Logger):
            continue
        for handler in list(candidate.handlers):
            candidate.removeHandler(handler)
        candidate.setLevel(logging.NOTSET)
        candidate.propagate = True
    root = logging.getLogger()
    root.setLevel(_ROOT_LEVEL)
    # configure_logging attaches a bare stderr handler to the root logger; pytest's own handlers stay.
    for handler in list(root.handlers):
        if type(handler) is logging.StreamHandler:
            root.removeHandler(handler)


@pytest.fixture(autouse=True)
def _clean_package_loggers() -> Iterator[None]:
    """Drop handlers and levels that configure_logging leaves behind."""

    _reset_package_loggers()
    yield
    _reset_package_loggers()
