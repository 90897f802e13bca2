"""
Process-wide settings for deepshells.

Values come from the environment, or from a `.env` file at the repository root,
read once at import time:

    from deepshells import settings
    settings.CACHE_DIR

See docs/environment-variables.md for the full list.
"""

import logging.config
import os
from pathlib import Path
from typing import Optional

from environs import Env

BASE_DIR = Path(__file__).resolve().parent

# Read environment variables from project .env, if it exists
# See: https://github.com/sloria/environs#readme
env = Env()
env.read_env(os.fspath(BASE_DIR.parent.parent / ".env"), recurse=False)


def _default_cache_dir() -> Path:
    xdg = os.environ.get("XDG_CACHE_HOME")
    root = Path(xdg) if xdg else Path.home() / ".cache"
    return root / "deepshells"


################################### Caches and limits ##################################

# Eigenpair (.dsec) and descriptor (.dsft) caches, keyed by normalized mesh content
CACHE_DIR: Path = env.path("DEEPSHELLS_CACHE", default=_default_cache_dir())

# Dense coupling export is a debugging aid; refuse anything bigger than this many
# entries (n_X * n_Y)
DENSE_EXPORT_LIMIT: int = env.int("DEEPSHELLS_DENSE_EXPORT_LIMIT", default=4_000_000)

# torch intra-op threads; None leaves torch's own default alone
NUM_THREADS: Optional[int] = env.int("DEEPSHELLS_NUM_THREADS", default=None)

####################################### Logging ########################################

log_level = env.log_level("LOG_LEVEL", default="INFO")

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"},
    },
    "handlers": {
        "console": {
            # The handler should print anything that gets to it, so that
            # debugging can be enabled for specific loggers without also turning
            # on debug loggers for every library
            "level": "NOTSET",
            "class": "logging.StreamHandler",
            "formatter": "plain",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": log_level,
    },
    "loggers": {
        "deepshells": {"level": log_level, "propagate": True},
        # trimesh logs every cache miss and optional import at DEBUG/INFO
        "trimesh": {"level": "WARNING"},
        "matplotlib": {"level": "WARNING"},
    },
}


def configure_logging(level: Optional[int] = None) -> None:
    """
    Apply LOGGING; `level` overrides LOG_LEVEL for the deepshells logger and root.
    """
    config = dict(LOGGING)
    if level is not None:
        config["root"] = {**LOGGING["root"], "level": level}  # type: ignore[dict-item]
        config["loggers"] = {
            **LOGGING["loggers"],  # type: ignore[dict-item]
            "deepshells": {"level": level, "propagate": True},
        }
    logging.config.dictConfig(config)
