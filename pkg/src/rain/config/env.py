"""
Environment variable loading for rain.

Loads an optional ``.env`` file and reads the variables the CLI falls back on:
``RAIN_SEED`` when no ``--seed`` flag is given, ``RAIN_LOG_LEVEL`` for the
default log level.
"""

import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from ..errors import UsageError

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

SEED_VAR = "RAIN_SEED"
LOG_LEVEL_VAR = "RAIN_LOG_LEVEL"


def load_env_file(env_file: str = ".env") -> bool:
    """
    Load variables from ``env_file`` without overriding ones already set.

    Returns:
        bool: True if the file existed and was loaded
    """
    if not Path(env_file).exists():
        return False
    logger.debug(f"Loading environment variables from {env_file}")
    return load_dotenv(env_file, override=False)


def env_seed() -> Optional[int]:
    raw = os.environ.get(SEED_VAR)
    if raw is None or not raw.strip():
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_VAR} must be an integer, got '{raw}'")


def env_log_level(default: int = logging.INFO) -> int:
    raw = os.environ.get(LOG_LEVEL_VAR, "").strip().upper()
    if not raw:
        return default
    level = logging.getLevelName(raw)
    if not isinstance(level, int):
        raise UsageError(f"{LOG_LEVEL_VAR} must be a logging level name, got '{raw}'")
    return level
