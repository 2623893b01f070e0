"""
Run manifest schema.
"""
import os
from enum import Enum
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, field_validator


class Command(str, Enum):
    SIMULATE = "simulate"
    BACKTEST = "backtest"
    PRECISION = "precision"
    WEIGHTS = "weights"


class RunManifest(BaseModel):
    """What a single CLI invocation runs and where it writes."""
    command: Command
    config_path: Optional[Path] = None
    output_dir: Path
    seed: int = 0
    log_level: str = "INFO"

    @field_validator("config_path")
    @classmethod
    def _config_exists(cls, value: Optional[Path]) -> Optional[Path]:
        if value is not None and not value.is_file():
            raise ValueError(f"config file not found: {value}")
        return value

    @field_validator("output_dir")
    @classmethod
    def _output_writable(cls, value: Path) -> Path:
        try:
            value.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ValueError(f"cannot create output directory {value}: {exc}") from exc
        if not os.access(value, os.W_OK):
            raise ValueError(f"output directory is not writable: {value}")
        return value

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        level = value.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level: {value}")
        return level
