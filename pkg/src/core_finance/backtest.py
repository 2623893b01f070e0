"""
Rolling-Window Backtest Engine.

Out-of-sample evaluation of portfolio strategies:
- re-estimate on the trailing window, hold for one period
- drift-adjusted turnover, leverage and max leverage
- transaction-cost-adjusted (net) returns
- Sharpe ratios and the Jobson-Korkie test with Memmel correction
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import norm

from ..parsers.panel_csv import FactorPanel, ReturnsPanel, check_alignment
from ..schemas.backtest import BacktestConfig, Baseline
from ..utils import derive_seed, ordered_map
from ..errors import BacktestError, NonPositiveFormError, NumericalError, ValidationError, ZeroVarianceError
from .factor_model import fit_ols
from .portfolio import PortfolioKind, build_portfolio, equal_weights
from .precision import estimate_returns_precision

logger = logging.getLogger(__name__)

MIN_JK_LENGTH = 10
DEGENERATE_CORRELATION = 1e-12
PROGRESS_EVERY = 12


class SeriesSharpe(NamedTuple):
    sr: float
    avg: float
    sd: float


class JKTest(NamedTuple):
    statistic: float
    p_value: float  # one-sided, H_a: SR_a > SR_b


@dataclass
class BacktestResult:
    """Per-period out-of-sample record of one strategy."""
    name: str
    time_index: Tuple[str, ...]  # out-of-sample periods
    gross_returns: np.ndarray  # T
    net_returns: np.ndarray  # T
    weights_history: np.ndarray  # (T + 1) x p, row i holds weights for period n_I + i
    turnover: np.ndarray  # T
    leverage: np.ndarray  # T
    max_leverage: np.ndarray  # T
    sr_gross: Optional[SeriesSharpe]
    sr_net: Optional[SeriesSharpe]
    failed_windows: List[int] = field(default_factory=list)
    rolling_sr_net: Optional[np.ndarray] = None
    rolling_turnover: Optional[np.ndarray] = None

    def period_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "period": list(self.time_index),
                "gross_return": self.gross_returns,
                "net_return": self.net_returns,
                "turnover": self.turnover,
                "leverage": self.leverage,
                "max_leverage": self.max_leverage,
                "rolling_sr_net": self.rolling_sr_net,
                "rolling_turnover": self.rolling_turnover,
            }
        )


@dataclass
class BacktestSuite:
    """Main strategy plus baselines and their pairwise tests."""
    main: str
    results: Dict[str, BacktestResult]
    comparisons: Dict[str, Dict[str, Optional[JKTest]]]

    def summary_frame(self) -> pd.DataFrame:
        """SR/AVG/SD/p-value for gross and net returns, mean turnover and leverage."""
        rows = []
        for name, result in self.results.items():
            row = {"strategy": name}
            for label, sharpe in (("gross", result.sr_gross), ("net", result.sr_net)):
                row[f"sr_{label}"] = sharpe.sr if sharpe else np.nan
                row[f"avg_{label}"] = sharpe.avg if sharpe else np.nan
                row[f"sd_{label}"] = sharpe.sd if sharpe else np.nan
                test = self.comparisons.get(name, {}).get(label)
                row[f"p_value_{label}"] = test.p_value if test else np.nan
            row["turnover"] = float(np.nanmean(result.turnover))
            row["leverage"] = float(np.nanmean(result.leverage))
            row["max_leverage"] = float(np.nanmean(result.max_leverage))
            row["failed_windows"] = len(result.failed_windows)
            rows.append(row)
        return pd.DataFrame(rows)


def drift_weights(weights: np.ndarray, asset_returns: np.ndarray) -> np.ndarray:
    """w⁺_j = w_j(1 + y_j)/(1 + y_P) with y_P = w'y."""
    portfolio = float(weights @ asset_returns)
    return weights * (1.0 + asset_returns) / (1.0 + portfolio)


def net_return(gross: np.ndarray, turnover: np.ndarray, cost: float) -> np.ndarray:
    """y_net = y_P - c(1 + y_P)·turnover."""
    return gross - cost * (1.0 + gross) * turnover


def turnover_leverage(
    weights_history: np.ndarray,
    returns: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Drift-adjusted turnover and short leverage per period.

    Args:
        weights_history: (T + 1) x p, row t holds the weights held in period t
        returns: T x p asset returns realized in each period

    Returns:
        (turnover, leverage, max_leverage), each of length T
    """
    weights_history = np.asarray(weights_history, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    if weights_history.shape[0] != returns.shape[0] + 1 or weights_history.shape[1] != returns.shape[1]:
        raise ValidationError(
            f"weights_history {weights_history.shape} does not match returns {returns.shape}",
            field="weights_history",
        )
    held = weights_history[:-1]
    following = weights_history[1:]
    portfolio = np.sum(held * returns, axis=1)
    drifted = held * (1.0 + returns) / (1.0 + portfolio)[:, None]
    turnover = np.sum(np.abs(following - drifted), axis=1)
    shorts = np.minimum(following, 0.0)
    leverage = np.abs(shorts.sum(axis=1))
    max_leverage = np.abs(shorts).max(axis=1)
    return turnover, leverage, max_leverage


def sharpe_of_series(returns: Sequence[float]) -> SeriesSharpe:
    """
    Mean over standard deviation (n-1 divisor); NaN gaps are skipped.

    Raises:
        ValidationError: Fewer than 2 observations
        ZeroVarianceError: Constant series
    """
    values = np.asarray(returns, dtype=np.float64)
    values = values[~np.isnan(values)]
    if values.size < 2:
        raise ValidationError(f"need at least 2 returns, got {values.size}", field="returns")
    avg = float(values.mean())
    sd = float(values.std(ddof=1))
    if np.all(values == values[0]) or sd == 0.0:
        raise ZeroVarianceError("return series has zero variance")
    return SeriesSharpe(sr=avg / sd, avg=avg, sd=sd)


def jk_memmel_test(series_a: Sequence[float], series_b: Sequence[float]) -> JKTest:
    """
    Jobson-Korkie test of SR_a = SR_b with the Memmel correction.

    z = (sr_a - sr_b)√T / sqrt(2(1 - ρ) + ½(sr_a² + sr_b²) - sr_a·sr_b·ρ²),
    one-sided p-value from the standard normal upper tail.
    """
    a = np.asarray(series_a, dtype=np.float64)
    b = np.asarray(series_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("series must have equal length", field="series")
    keep = ~(np.isnan(a) | np.isnan(b))
    a, b = a[keep], b[keep]
    t = a.size
    if t < MIN_JK_LENGTH:
        raise ValidationError(f"Jobson-Korkie test needs T >= {MIN_JK_LENGTH}, got {t}", field="series")
    if np.array_equal(a, b):
        return JKTest(statistic=0.0, p_value=0.5)

    sr_a = sharpe_of_series(a).sr
    sr_b = sharpe_of_series(b).sr
    rho = float(np.corrcoef(a, b)[0, 1])
    if abs(rho) >= 1.0 - DEGENERATE_CORRELATION:
        raise NonPositiveFormError(f"degenerate correlation between series (ρ={rho:.15f})")
    variance = 2.0 * (1.0 - rho) + 0.5 * (sr_a ** 2 + sr_b ** 2) - sr_a * sr_b * rho ** 2
    if not variance > 0.0:
        raise NonPositiveFormError(f"Jobson-Korkie variance is not positive ({variance:.3e})")
    statistic = (sr_a - sr_b) * np.sqrt(t) / np.sqrt(variance)
    return JKTest(statistic=float(statistic), p_value=float(norm.sf(statistic)))


def rolling_sharpe(series: np.ndarray, window: int) -> np.ndarray:
    """Trailing-window mean/sd (n-1 divisor); NaN until the window fills."""
    frame = pd.Series(series, dtype=float)
    mean = frame.rolling(window, min_periods=window).mean()
    sd = frame.rolling(window, min_periods=window).std(ddof=1)
    return (mean / sd.where(sd > 0.0)).to_numpy()


def rolling_mean(series: np.ndarray, window: int) -> np.ndarray:
    return pd.Series(series, dtype=float).rolling(window, min_periods=window).mean().to_numpy()


def select_asset_subset(returns: ReturnsPanel, n_assets: int, seed: int) -> ReturnsPanel:
    """Random subset of assets (sorted, without replacement)."""
    if n_assets > returns.p:
        raise ValidationError(f"n_assets ({n_assets}) exceeds available assets ({returns.p})", field="n_assets")
    rng = np.random.default_rng(derive_seed(seed, "subset"))
    picks = np.sort(rng.choice(returns.p, size=n_assets, replace=False))
    logger.info(f"Backtesting a random subset of {n_assets} of {returns.p} assets")
    return returns.select_assets(picks)


def _sample_pinv(window_returns: np.ndarray) -> np.ndarray:
    cov = np.cov(window_returns, bias=True)
    return np.linalg.pinv((cov + cov.T) / 2.0, hermitian=True)


def assemble_weights_history(estimates: Sequence[Optional[np.ndarray]], realized: np.ndarray) -> np.ndarray:
    """
    Stack per-window weights into a (T + 1) x p history.

    A failed window holds the drifted weights of the previous period, so
    its rebalance has zero turnover. A failure with nothing to hold (the
    first window, or after an unfilled row) stays NaN.
    """
    p = realized.shape[1]
    rows: List[np.ndarray] = []
    for i, weights in enumerate(estimates):
        if weights is not None:
            rows.append(np.asarray(weights, dtype=np.float64))
        elif i > 0 and not np.isnan(rows[-1]).any():
            rows.append(drift_weights(rows[-1], realized[i - 1]))
        else:
            rows.append(np.full(p, np.nan))
    return np.vstack(rows)


class _WindowEstimator:
    """Weights for the period following an in-sample window."""

    def __init__(
        self,
        returns: ReturnsPanel,
        factors: FactorPanel,
        config: BacktestConfig,
        source: str,
        gamma_override: Optional[np.ndarray] = None,
    ):
        self.returns = returns
        self.factors = factors
        self.config = config
        self.source = source
        self.gamma_override = gamma_override

    def __call__(self, stop: int) -> Optional[np.ndarray]:
        config = self.config
        start = stop - config.window
        window_y = self.returns.values[:, start:stop]
        kind = config.strategy
        if self.source == Baseline.EQUAL_WEIGHT.value or kind == PortfolioKind.EQUAL_WEIGHT:
            return equal_weights(self.returns.p).weights
        try:
            mu_hat = window_y.mean(axis=1)
            if self.gamma_override is not None:
                gamma = self.gamma_override
            elif self.source == Baseline.SAMPLE_COV_PINV.value:
                gamma = _sample_pinv(window_y)
            else:
                fit = fit_ols(self.returns.select_periods(start, stop), self.factors.select_periods(start, stop))
                settings = dataclasses.replace(
                    config.nodewise_settings(1), seed=derive_seed(config.seed, "window", stop)
                )
                gamma = estimate_returns_precision(fit, settings).gamma
            result = build_portfolio(kind, gamma, mu_hat, config.rho1, config.sigma, config.delta)
        except (NumericalError, ValidationError) as exc:
            logger.warning(f"{self.source}: window ending at period {stop} failed ({exc})")
            return None
        if (stop - config.window) % PROGRESS_EVERY == 0:
            logger.info(f"{self.source}: window {stop - config.window + 1} estimated")
        return result.weights


def rolling_backtest(
    returns: ReturnsPanel,
    factors: FactorPanel,
    config: BacktestConfig,
    source: str = "nodewise",
    gamma_override: Optional[np.ndarray] = None,
) -> BacktestResult:
    """
    Rolling-window backtest of one strategy.

    The window [s - n_I, s) produces the weights held in period s, for
    s = n_I, ..., n. The last set is never realized but prices the final
    rebalance, so every out-of-sample period has a turnover. A failed window
    keeps the previous portfolio, drifted, and is listed in failed_windows.

    Args:
        returns: Aligned returns panel
        factors: Aligned factor panel
        config: Backtest settings
        source: "nodewise" or a Baseline value
        gamma_override: Fixed precision matrix used instead of estimation

    Raises:
        BacktestError: If more than max_failed_fraction of windows fail
    """
    check_alignment(returns, factors)
    config.check_panel(returns.n, factors.k)
    n, window = returns.n, config.window

    stops = list(range(window, n + 1))
    estimator = _WindowEstimator(returns, factors, config, source, gamma_override)
    estimates = ordered_map(estimator, stops, config.threads)

    failed = [stop for stop, w in zip(stops, estimates) if w is None]
    if len(failed) > config.max_failed_fraction * len(stops):
        raise BacktestError(
            f"{source}: {len(failed)} of {len(stops)} windows failed (limit {config.max_failed_fraction:.0%})"
        )
    realized = returns.values[:, window:n].T  # T x p
    weights_history = assemble_weights_history(estimates, realized)
    gross = np.sum(weights_history[:-1] * realized, axis=1)
    turnover, leverage, max_leverage = turnover_leverage(weights_history, realized)
    net = gross.copy() if config.transaction_cost == 0.0 else net_return(gross, turnover, config.transaction_cost)

    def _safe_sharpe(series: np.ndarray) -> Optional[SeriesSharpe]:
        try:
            return sharpe_of_series(series)
        except (ZeroVarianceError, ValidationError) as exc:
            logger.warning(f"{source}: Sharpe ratio undefined ({exc})")
            return None

    logger.info(f"{source}: {len(stops) - 1} out-of-sample periods, {len(failed)} failed window(s)")
    return BacktestResult(
        name=source,
        time_index=returns.time_index[window:n],
        gross_returns=gross,
        net_returns=net,
        weights_history=weights_history,
        turnover=turnover,
        leverage=leverage,
        max_leverage=max_leverage,
        sr_gross=_safe_sharpe(gross),
        sr_net=_safe_sharpe(net),
        failed_windows=failed,
        rolling_sr_net=rolling_sharpe(net, config.rolling_window),
        rolling_turnover=rolling_mean(turnover, config.rolling_window),
    )


def _compare(a: np.ndarray, b: np.ndarray, label: str) -> Optional[JKTest]:
    try:
        return jk_memmel_test(a, b)
    except (NumericalError, ValidationError) as exc:
        logger.warning(f"Jobson-Korkie test ({label}) undefined: {exc}")
        return None


def run_backtest_suite(returns: ReturnsPanel, factors: FactorPanel, config: BacktestConfig) -> BacktestSuite:
    """
    Backtest the configured strategy and every baseline on the same panel.

    Each baseline gets a one-sided Jobson-Korkie p-value against the
    strategy, for gross and net returns.
    """
    if config.n_assets is not None:
        returns = select_asset_subset(returns, config.n_assets, config.subset_seed)

    main = f"nodewise_{config.strategy.value}"
    results = {main: rolling_backtest(returns, factors, config, "nodewise")}
    results[main].name = main
    for baseline in config.baselines:
        results[baseline.value] = rolling_backtest(returns, factors, config, baseline.value)

    strategy = results[main]
    comparisons: Dict[str, Dict[str, Optional[JKTest]]] = {}
    for baseline in config.baselines:
        other = results[baseline.value]
        comparisons[baseline.value] = {
            "gross": _compare(strategy.gross_returns, other.gross_returns, f"{main} vs {baseline.value}, gross"),
            "net": _compare(strategy.net_returns, other.net_returns, f"{main} vs {baseline.value}, net"),
        }
    return BacktestSuite(main=main, results=results, comparisons=comparisons)
