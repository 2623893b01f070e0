"""
Command-line settings.

Flat key-value settings with layered sources, lowest to highest:
defaults < config file < NODEWISE_* environment variables < CLI flags.
"""
import logging
import os
from pathlib import Path
from typing import Annotated, Any, Dict, List, Optional

from dotenv import dotenv_values
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, NoDecode, SettingsConfigDict

from ..core_finance.portfolio import PortfolioKind
from ..core_finance.precision import Selector
from ..errors import ConfigError, InputFileNotFoundError
from ..schemas.backtest import BacktestConfig, Baseline
from ..schemas.simulation import BaseErrorCovSource, CalibrationSpec, Estimator, PRule, SimConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "NODEWISE_"

_LIST_FIELDS = (
    "n_values",
    "p_rules",
    "rhos",
    "block_sizes",
    "estimators",
    "baselines",
    "factor_mean",
    "factor_cov",
)


def _default_threads() -> int:
    return os.cpu_count() or 1


class Settings(BaseSettings):
    """Every configurable value of the command-line tool."""

    model_config = SettingsConfigDict(env_prefix=ENV_PREFIX, extra="ignore", case_sensitive=False)

    # Inputs and outputs
    returns_path: Optional[Path] = None
    factors_path: Optional[Path] = None
    output_dir: Path = Path("results")
    log_level: str = "INFO"

    # Reproducibility and parallelism
    seed: int = 0
    threads: int = Field(default_factory=_default_threads, ge=1)

    # Nodewise lasso
    selector: Selector = Selector.GIC
    cv_folds: int = Field(default=10, ge=2)
    cv_blocked: bool = False
    grid_size: int = Field(default=100, ge=2)
    lambda_min_ratio: float = Field(default=1e-3, gt=0, lt=1)

    # Portfolio
    strategy: PortfolioKind = PortfolioKind.GMV
    rho1: float = 0.01
    sigma: float = Field(default=0.04, gt=0)
    delta: float = Field(default=1e6, gt=0)

    # Simulation sweep
    n_values: Annotated[List[int], NoDecode] = [100]
    p_rules: Annotated[List[PRule], NoDecode] = [PRule.HALF_N]
    p: Optional[int] = None
    n_factors: int = 3
    rhos: Annotated[List[float], NoDecode] = [0.5]
    block_sizes: Annotated[List[int], NoDecode] = []
    replications: int = 100
    estimators: Annotated[List[Estimator], NoDecode] = [Estimator.NODEWISE]
    oracle_diagnostic: bool = False

    # Calibration of the simulated market
    factor_mean: Annotated[List[float], NoDecode] = []
    factor_cov: Annotated[List[float], NoDecode] = []  # row-major K*K
    alpha_mean: float = 0.0
    alpha_sd: float = 0.002
    beta_low: float = 0.25
    beta_high: float = 1.75
    error_var_low: float = 0.5
    error_var_high: float = 2.0
    error_var_scale: float = 1e-3
    base_correlation: float = 0.8
    base_error_cov_source: BaseErrorCovSource = BaseErrorCovSource.SYNTHETIC
    base_error_cov_path: Optional[Path] = None

    # Backtest
    window: int = 120
    transaction_cost: float = Field(default=0.005, ge=0)
    baselines: Annotated[List[Baseline], NoDecode] = [Baseline.EQUAL_WEIGHT, Baseline.SAMPLE_COV_PINV]
    n_assets: Optional[int] = None
    subset_seed: int = 0
    rolling_window: int = 24
    max_failed_fraction: float = 0.10

    @field_validator(*_LIST_FIELDS, mode="before")
    @classmethod
    def _split_commas(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value

    @field_validator("log_level")
    @classmethod
    def _upper_level(cls, value: str) -> str:
        return value.upper()

    def calibration(self) -> CalibrationSpec:
        factor_cov = None
        if self.factor_cov:
            k = int(round(len(self.factor_cov) ** 0.5))
            if k * k != len(self.factor_cov):
                raise ConfigError(f"factor_cov needs K*K entries, got {len(self.factor_cov)}")
            factor_cov = [self.factor_cov[i * k:(i + 1) * k] for i in range(k)]
        return CalibrationSpec(
            factor_mean=self.factor_mean or None,
            factor_cov=factor_cov,
            alpha_mean=self.alpha_mean,
            alpha_sd=self.alpha_sd,
            beta_low=self.beta_low,
            beta_high=self.beta_high,
            error_var_low=self.error_var_low,
            error_var_high=self.error_var_high,
            error_var_scale=self.error_var_scale,
            base_correlation=self.base_correlation,
            base_error_cov_source=self.base_error_cov_source,
            base_error_cov_path=self.base_error_cov_path,
        )

    def sim_configs(self) -> List[SimConfig]:
        """
        Expand the sweep into design points.

        Order: design (rho values, or the block design when block_sizes is
        set), then n, then p-rule.
        """
        calibration = self.calibration()
        designs: List[Dict[str, Any]]
        if self.block_sizes:
            designs = [{"block_sizes": list(self.block_sizes)}]
        else:
            designs = [{"rho": rho} for rho in self.rhos]
        if not designs or not self.n_values or not self.p_rules:
            raise ConfigError("simulation needs at least one design, one n and one p-rule")
        return [
            SimConfig(
                n=n,
                p_rule=p_rule,
                p=self.p,
                n_factors=self.n_factors,
                replications=self.replications,
                seed=self.seed,
                selector=self.selector,
                rho1=self.rho1,
                sigma=self.sigma,
                calibration=calibration,
                cv_folds=self.cv_folds,
                cv_blocked=self.cv_blocked,
                grid_size=self.grid_size,
                lambda_min_ratio=self.lambda_min_ratio,
                threads=self.threads,
                estimators=self.estimators,
                oracle_diagnostic=self.oracle_diagnostic,
                **design,
            )
            for design in designs
            for n in self.n_values
            for p_rule in self.p_rules
        ]

    def backtest_config(self) -> BacktestConfig:
        return BacktestConfig(
            window=self.window,
            strategy=self.strategy,
            rho1=self.rho1,
            sigma=self.sigma,
            delta=self.delta,
            transaction_cost=self.transaction_cost,
            selector=self.selector,
            cv_folds=self.cv_folds,
            cv_blocked=self.cv_blocked,
            grid_size=self.grid_size,
            lambda_min_ratio=self.lambda_min_ratio,
            seed=self.seed,
            threads=self.threads,
            baselines=self.baselines,
            n_assets=self.n_assets,
            subset_seed=self.subset_seed,
            rolling_window=self.rolling_window,
            max_failed_fraction=self.max_failed_fraction,
        )


def _normalize_key(key: str) -> str:
    key = key.strip().lower()
    prefix = ENV_PREFIX.lower()
    return key[len(prefix):] if key.startswith(prefix) else key


def read_config_file(path: Path) -> Dict[str, str]:
    """
    Parse a flat key=value config file.

    Keys are case-insensitive and may carry the NODEWISE_ prefix; empty
    values are skipped.

    Raises:
        InputFileNotFoundError: If the file does not exist
        ConfigError: On unknown keys
    """
    path = Path(path)
    if not path.is_file():
        raise InputFileNotFoundError(f"config file not found: {path}", path=str(path))
    known = set(Settings.model_fields)
    values: Dict[str, str] = {}
    for raw_key, raw_value in dotenv_values(path).items():
        key = _normalize_key(raw_key)
        if key not in known:
            raise ConfigError(f"{path.name}: unknown setting '{raw_key}'")
        if raw_value is None or raw_value.strip() == "":
            continue
        values[key] = raw_value.strip()
    return values


def load_settings(config_path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> Settings:
    """
    Build Settings from all sources.

    Args:
        config_path: Optional flat config file
        overrides: CLI values; None entries are ignored

    Usage:
        settings = load_settings(Path("run.cfg"), {"seed": 7})
        configs = settings.sim_configs()
    """
    merged: Dict[str, Any] = read_config_file(config_path) if config_path is not None else {}
    env_settings = Settings()
    for name in env_settings.model_fields_set:
        merged[name] = getattr(env_settings, name)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    settings = Settings(**merged)
    logger.debug(f"Settings resolved from {len(merged)} explicit value(s)")
    return settings
