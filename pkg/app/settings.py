"""
Loads process configuration from environment variables (.env file in dev)
and points at the YAML configuration tree.

Why this file matters:
- Log verbosity, the solve budget and the controller timing are switched here
  without touching scenario files.
- Everything domain-specific (vehicle, weights, scenarios) stays in config/*.yaml;
  this module only knows where that tree lives and how to read it.

ENV:
  ENVMPC_LOG_LEVEL        # loguru level, default INFO
  ENVMPC_CONFIG_DIR       # default config
  ENVMPC_TRACKS_DIR       # default data/tracks
  ENVMPC_RUNS_DIR         # where the API writes run directories, default runs
  ENVMPC_SOLVE_BUDGET_MS  # wall-clock cap per OCP solve, default 100
  ENVMPC_CONTROL_PERIOD   # controller tick in s, default 0.1 (10 Hz)
  ENVMPC_PLANT_DT         # plant integration step in s, default 0.001
  ENVMPC_MAX_FAILURES     # consecutive failed solves before safe stop, default 5
  ENVMPC_BLOCK_WINDOW     # envelope blocks handed to the NLP, default 16
"""

from __future__ import annotations

import os
import sys
from pathlib import Path
from typing import Any, Dict

import yaml
from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, Field

from .errors import ConfigurationError

# Allow local dev via .env
load_dotenv()


class Settings(BaseModel):
    # ---- Logging ----
    log_level: str = os.environ.get("ENVMPC_LOG_LEVEL", "INFO")

    # ---- Paths ----
    config_dir: Path = Path(os.environ.get("ENVMPC_CONFIG_DIR", "config"))
    tracks_dir: Path = Path(os.environ.get("ENVMPC_TRACKS_DIR", "data/tracks"))
    runs_dir: Path = Path(os.environ.get("ENVMPC_RUNS_DIR", "runs"))

    # ---- Controller timing ----
    solve_budget_ms: float = Field(default_factory=lambda: float(os.environ.get("ENVMPC_SOLVE_BUDGET_MS", "100")))
    control_period: float = Field(default_factory=lambda: float(os.environ.get("ENVMPC_CONTROL_PERIOD", "0.1")))
    plant_dt: float = Field(default_factory=lambda: float(os.environ.get("ENVMPC_PLANT_DT", "0.001")))
    max_failures: int = Field(default_factory=lambda: int(os.environ.get("ENVMPC_MAX_FAILURES", "5")))
    block_window: int = Field(default_factory=lambda: int(os.environ.get("ENVMPC_BLOCK_WINDOW", "16")))


settings = Settings()


def configure_logging(level: str | None = None) -> None:
    """Reset loguru to a single stderr sink at the configured level."""
    logger.remove()
    logger.add(sys.stderr, level=(level or settings.log_level).upper())


def load_yaml(path: str | Path) -> Dict[str, Any]:
    p = Path(path)
    if not p.is_absolute() and not p.exists():
        p = settings.config_dir / p
    try:
        with open(p, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except FileNotFoundError:
        raise ConfigurationError(f"Config file not found: {p}")
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Invalid YAML in {p}: {e}")
    if not isinstance(raw, dict):
        raise ConfigurationError(f"Expected a mapping at the top of {p}")
    return raw


def merged(defaults: Dict[str, Any], section: Dict[str, Any] | None) -> Dict[str, Any]:
    """Shallow merge of a section over its defaults block."""
    return {**(defaults or {}), **(section or {})}
