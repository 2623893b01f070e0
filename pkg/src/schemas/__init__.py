# Validated configuration models for nodewise-portfolio

from .simulation import BaseErrorCovSource, CalibrationSpec, Estimator, PRule, SimConfig
from .backtest import Baseline, BacktestConfig
from .manifest import Command, RunManifest

__all__ = [
    "BaseErrorCovSource",
    "CalibrationSpec",
    "Estimator",
    "PRule",
    "SimConfig",
    "Baseline",
    "BacktestConfig",
    "Command",
    "RunManifest",
]
