"""
Backtest configuration schema.
"""
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field

from ..errors import ValidationError
from ..core_finance.portfolio import PortfolioKind
from ..core_finance.precision import NodewiseSettings, Selector


class Baseline(str, Enum):
    """Reference strategies the nodewise strategy is tested against."""
    EQUAL_WEIGHT = "equal_weight"
    SAMPLE_COV_PINV = "sample_cov_pinv"


class BacktestConfig(BaseModel):
    """Rolling-window evaluation settings."""
    window: int = Field(default=120, ge=2)  # in-sample length n_I
    strategy: PortfolioKind = PortfolioKind.GMV
    rho1: float = 0.01
    sigma: float = Field(default=0.04, gt=0)
    delta: float = Field(default=1e6, gt=0)
    transaction_cost: float = Field(default=0.005, ge=0)
    selector: Selector = Selector.GIC
    cv_folds: int = Field(default=10, ge=2)
    cv_blocked: bool = False
    grid_size: int = Field(default=100, ge=2)
    lambda_min_ratio: float = Field(default=1e-3, gt=0, lt=1)
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    baselines: List[Baseline] = Field(
        default_factory=lambda: [Baseline.EQUAL_WEIGHT, Baseline.SAMPLE_COV_PINV]
    )
    n_assets: Optional[int] = Field(default=None, ge=2)  # random subset size
    subset_seed: int = 0
    rolling_window: int = Field(default=24, ge=2)
    max_failed_fraction: float = Field(default=0.10, ge=0, le=1)

    def check_panel(self, n: int, k: int) -> None:
        """
        Validate the window against the panel dimensions.

        Raises:
            ValidationError: If window >= n or window < K + 10
        """
        if self.window >= n:
            raise ValidationError(
                f"window ({self.window}) must be smaller than the number of periods ({n})", field="window"
            )
        if self.window < k + 10:
            raise ValidationError(
                f"window ({self.window}) must be at least K + 10 = {k + 10}", field="window"
            )

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
