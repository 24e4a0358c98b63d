"""
Runtime settings for the switchback toolkit.

Values come from environment variables, optionally loaded from a `.env`
file at the repository root.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

from dotenv import load_dotenv

BASE_DIR = Path(__file__).parent.parent
DATA_DIR = BASE_DIR / "data"
DEFAULT_OUTPUT_DIR = BASE_DIR / "outbox"

load_dotenv(dotenv_path=BASE_DIR / ".env")

LOG_FORMAT = "[%(levelname)s] %(name)s: %(message)s"


def _env(name: str) -> str:
    return (os.getenv(name) or "").strip()


def get_output_dir() -> Path:
    """Return the directory CLI outputs are written to."""
    value = _env("SWITCHBACK_OUTPUT_DIR")
    return Path(value) if value else DEFAULT_OUTPUT_DIR


def get_db_path() -> Path:
    """Return the SQLite file used to record experiment runs."""
    value = _env("SWITCHBACK_DB_PATH")
    return Path(value) if value else get_output_dir() / "experiments.db"


def get_workers() -> int:
    """Process pool width for replicate simulation (1 = in-process)."""
    value = _env("SWITCHBACK_WORKERS")
    try:
        return max(int(value), 1) if value else 1
    except ValueError:
        return 1


def get_max_lag() -> int:
    """Largest matrix power inspected when fitting mixing times."""
    value = _env("SWITCHBACK_MAX_LAG")
    try:
        return max(int(value), 1) if value else 64
    except ValueError:
        return 64


def get_log_level() -> str:
    return _env("SWITCHBACK_LOG_LEVEL").upper() or "INFO"


def configure_logging(level: str | None = None) -> None:
    """Install the console handler used by the CLI and scripts."""
    logging.basicConfig(level=(level or get_log_level()), format=LOG_FORMAT, force=True)
