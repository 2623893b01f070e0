"""
Simulation configuration schemas.
"""
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..core_finance.precision import NodewiseSettings, Selector

# Monthly magnitudes for market, size and value factors
DEFAULT_FACTOR_MEANS = [0.006, 0.002, 0.003]
DEFAULT_FACTOR_SDS = [0.045, 0.030, 0.030]
DEFAULT_FACTOR_CORR = [
    [1.00, 0.25, -0.20],
    [0.25, 1.00, -0.10],
    [-0.20, -0.10, 1.00],
]
EXTRA_FACTOR_MEAN = 0.002
EXTRA_FACTOR_SD = 0.030


class PRule(str, Enum):
    """How the number of assets follows from n."""
    HALF_N = "half_n"
    THREE_HALVES_N = "three_halves_n"
    EXPLICIT = "explicit"


class BaseErrorCovSource(str, Enum):
    """Where the base error covariance comes from."""
    SYNTHETIC = "synthetic"
    USER_MATRIX = "user_matrix"


class Estimator(str, Enum):
    """Precision estimators evaluated by the simulator."""
    NODEWISE = "nodewise"
    SAMPLE_PINV = "sample_pinv"


def default_factor_moments(k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Factor mean and covariance for K factors (extra factors uncorrelated)."""
    mean = np.full(k, EXTRA_FACTOR_MEAN)
    sds = np.full(k, EXTRA_FACTOR_SD)
    corr = np.eye(k)
    m = min(k, len(DEFAULT_FACTOR_MEANS))
    mean[:m] = DEFAULT_FACTOR_MEANS[:m]
    sds[:m] = DEFAULT_FACTOR_SDS[:m]
    corr[:m, :m] = np.asarray(DEFAULT_FACTOR_CORR)[:m, :m]
    return mean, corr * np.outer(sds, sds)


class CalibrationSpec(BaseModel):
    """Distributions the true model is drawn from."""
    factor_mean: Optional[List[float]] = None
    factor_cov: Optional[List[List[float]]] = None
    alpha_mean: float = 0.0
    alpha_sd: float = Field(default=0.002, ge=0)
    beta_low: float = 0.25
    beta_high: float = 1.75
    error_var_low: float = Field(default=0.5, gt=0)
    error_var_high: float = Field(default=2.0, gt=0)
    error_var_scale: float = Field(default=1e-3, gt=0)
    base_correlation: float = Field(default=0.8, ge=0, lt=1)
    base_error_cov_source: BaseErrorCovSource = BaseErrorCovSource.SYNTHETIC
    base_error_cov_path: Optional[Path] = None

    @model_validator(mode="after")
    def _check_ranges(self) -> "CalibrationSpec":
        if self.beta_low > self.beta_high:
            raise ValueError("beta_low must not exceed beta_high")
        if self.error_var_low > self.error_var_high:
            raise ValueError("error_var_low must not exceed error_var_high")
        if self.base_error_cov_source == BaseErrorCovSource.USER_MATRIX and self.base_error_cov_path is None:
            raise ValueError("user_matrix calibration needs base_error_cov_path")
        return self

    def factor_moments(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """Resolved (factor_mean, factor_cov) for K factors."""
        default_mean, default_cov = default_factor_moments(k)
        mean = default_mean if self.factor_mean is None else np.asarray(self.factor_mean, dtype=float)
        cov = default_cov if self.factor_cov is None else np.asarray(self.factor_cov, dtype=float)
        if mean.shape != (k,):
            raise ValueError(f"factor_mean needs {k} entries, got {mean.shape}")
        if cov.shape != (k, k):
            raise ValueError(f"factor_cov needs shape ({k}, {k}), got {cov.shape}")
        if not np.allclose(cov, cov.T):
            raise ValueError("factor_cov must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("factor_cov must be positive definite") from None
        return mean, cov


class SimConfig(BaseModel):
    """One Monte-Carlo design point."""
    n: int = Field(ge=20)
    p_rule: PRule = PRule.HALF_N
    p: Optional[int] = Field(default=None, ge=2)
    n_factors: int = Field(default=3, ge=1)
    rho: Optional[float] = None
    block_sizes: Optional[List[int]] = None
    replications: int = Field(default=100, ge=1)
    seed: int = 0
    selector: Selector = Selector.GIC
    rho1: float = 0.01
    sigma: float = Field(default=0.04, gt=0)
    calibration: CalibrationSpec = Field(default_factory=CalibrationSpec)
    cv_folds: int = Field(default=10, ge=2)
    cv_blocked: bool = False
    grid_size: int = Field(default=100, ge=2)
    lambda_min_ratio: float = Field(default=1e-3, gt=0, lt=1)
    threads: int = Field(default=1, ge=1)
    estimators: List[Estimator] = Field(default_factory=lambda: [Estimator.NODEWISE])
    oracle_diagnostic: bool = False

    @model_validator(mode="after")
    def _check_design(self) -> "SimConfig":
        if (self.rho is None) == (self.block_sizes is None):
            raise ValueError("exactly one of rho or block_sizes must be set")
        if self.rho is not None and not -1.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (-1, 1), got {self.rho}")
        if self.block_sizes is not None:
            if not self.block_sizes or any(b < 1 for b in self.block_sizes):
                raise ValueError("block_sizes must be positive integers")
            if len(self.block_sizes) > 1 and sum(self.block_sizes) != self.resolved_p():
                raise ValueError(f"block_sizes sum to {sum(self.block_sizes)}, expected p={self.resolved_p()}")
        if self.p_rule == PRule.EXPLICIT and self.p is None:
            raise ValueError("p_rule=explicit needs p")
        if self.n_factors >= self.n:
            raise ValueError(f"n_factors ({self.n_factors}) must be below n ({self.n})")
        if self.cv_folds > self.n:
            raise ValueError(f"cv_folds ({self.cv_folds}) exceeds n ({self.n})")
        self.calibration.factor_moments(self.n_factors)
        return self

    def resolved_p(self) -> int:
        if self.p_rule == PRule.HALF_N:
            return self.n // 2
        if self.p_rule == PRule.THREE_HALVES_N:
            return (3 * self.n) // 2
        return int(self.p)

    def design_label(self) -> str:
        if self.rho is not None:
            return f"rho={self.rho:g}"
        return "blocks=" + "+".join(str(b) for b in self.block_sizes)

    def nodewise_settings(self, threads: int = 1) -> NodewiseSettings:
        return NodewiseSettings(
            selector=self.selector,
            cv_folds=self.cv_folds,
            cv_blocked=self.cv_blocked,
            seed=self.seed,
            grid_size=self.grid_size,
            lambda_min_ratio=self.lambda_min_ratio,
            threads=threads,
        )
