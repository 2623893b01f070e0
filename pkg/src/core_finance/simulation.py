"""
Monte-Carlo Simulation Engine.

Draws a true factor model, simulates panels, runs the estimation
pipeline and records the absolute error of squared Sharpe-ratio
estimates:
- MSR: constrained maximum Sharpe ratio (msr_star)
- OOS-MSR: maximum out-of-sample Sharpe ratio against SR*
- GMV-SR: global minimum-variance Sharpe ratio
- MKW-SR: Markowitz Sharpe ratio at the target mean
plus plug-in variants (GMV-SR-P, MKW-SR-P, MSR-P) that evaluate
estimated weights under the true moments.

Error covariances are a calibrated base matrix masked (Hadamard product)
by a Toeplitz or block-of-ones pattern.
"""

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve

from ..parsers.panel_csv import FactorPanel, ReturnsPanel, load_matrix_csv
from ..schemas.simulation import BaseErrorCovSource, CalibrationSpec, Estimator, SimConfig
from ..utils import derive_seed, ordered_map
from ..errors import NodewiseError, NumericalError, SingularMatrixError, ValidationError
from .factor_model import fit_ols
from .portfolio import (
    PortfolioKind,
    afd,
    constrained_msr,
    gmv_sharpe,
    markowitz_sharpe,
    mos_sharpe,
    plugin_sharpe_with_estimated_weights,
)
from .precision import (
    NodewisePrecision,
    NodewiseSettings,
    combine_smw,
    nodewise_from_residuals,
    toeplitz_cov,
)

logger = logging.getLogger(__name__)

SPD_EIGEN_FLOOR = 1e-10
SPD_RIDGE_PAD = 1e-8

CATEGORIES = ("MSR", "OOS-MSR", "GMV-SR", "MKW-SR")
PLUGIN_CATEGORIES = ("GMV-SR-P", "MKW-SR-P", "MSR-P")

FACTOR_NAMES = ("MKT", "SMB", "HML")


@dataclass(frozen=True)
class TrueModel:
    """Population parameters of one simulated market."""
    sigma_n: np.ndarray  # p x p error covariance
    sigma_y: np.ndarray  # p x p returns covariance
    mu: np.ndarray  # p
    loadings: np.ndarray  # p x K
    factor_cov: np.ndarray  # K x K
    factor_mean: np.ndarray  # K
    alpha: np.ndarray  # p
    ridge: float = 0.0  # diagonal shift applied by the SPD guard

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    @property
    def k(self) -> int:
        return self.factor_mean.shape[0]


@dataclass(frozen=True)
class SimulatedPanel:
    returns: ReturnsPanel
    factors: FactorPanel
    true_errors: np.ndarray  # p x n


@dataclass(frozen=True)
class TrueTargets:
    """Population Sharpe-ratio quantities."""
    gamma: np.ndarray
    gmv_sr: float
    mmv_sr: float
    msr: float
    msr_c: float
    msr_star: float
    sr_star: float
    branch: int
    a: float
    f: float
    d: float

    def snapshot(self) -> Dict[str, float]:
        return {
            "gmv_sr": self.gmv_sr,
            "mmv_sr": self.mmv_sr,
            "msr": self.msr,
            "msr_c": self.msr_c,
            "msr_star": self.msr_star,
            "sr_star": self.sr_star,
            "branch": float(self.branch),
            "a": self.a,
            "f": self.f,
            "d": self.d,
        }


@dataclass
class ReplicationRecord:
    """Outcome of one replication."""
    index: int
    seed: int
    ok: bool
    message: str = ""
    errors: Dict[Tuple[str, str], float] = field(default_factory=dict)
    ratio_errors: Dict[Tuple[str, str], float] = field(default_factory=dict)
    precision_error: Optional[float] = None
    oracle_precision_error: Optional[float] = None
    targets: Dict[str, float] = field(default_factory=dict)
    runtime_seconds: float = 0.0


@dataclass
class SimReport:
    """Aggregated Monte-Carlo results for one design point."""
    config: SimConfig
    p: int
    records: List[ReplicationRecord]
    mean_errors: Dict[Tuple[str, str], float]
    mean_ratio_errors: Dict[Tuple[str, str], float]
    truth_snapshot: Dict[str, float]
    failure_count: int
    runtime_seconds: float

    def rows(self) -> List[Dict[str, object]]:
        """One row per (estimator, category), in a fixed order."""
        out = []
        for (estimator, category), value in self.mean_errors.items():
            successes = sum(
                1 for r in self.records if r.ok and not np.isnan(r.errors.get((estimator, category), np.nan))
            )
            out.append(
                {
                    "estimator": estimator,
                    "category": category,
                    "n": self.config.n,
                    "p_rule": self.config.p_rule.value,
                    "p": self.p,
                    "design": self.config.design_label(),
                    "selector": self.config.selector.value,
                    "mean_abs_error": value,
                    "mean_ratio_error": self.mean_ratio_errors[(estimator, category)],
                    "successes": successes,
                    "failures": self.failure_count,
                }
            )
        return out


def block_layout(block_sizes: Sequence[int], p: int) -> List[int]:
    """Expand block sizes to cover p assets; a single size repeats, the last block truncated."""
    if len(block_sizes) == 1:
        size = block_sizes[0]
        sizes = [size] * (p // size)
        if p % size:
            sizes.append(p % size)
        return sizes
    if sum(block_sizes) != p:
        raise ValidationError(f"block sizes sum to {sum(block_sizes)}, expected {p}", field="block_sizes")
    return list(block_sizes)


def correlation_mask(config: SimConfig, p: int) -> np.ndarray:
    """Toeplitz(ρ) or a block-diagonal matrix of ones."""
    if config.rho is not None:
        return toeplitz_cov(config.rho, p)
    return block_diag(*[np.ones((b, b)) for b in block_layout(config.block_sizes, p)])


def spd_guard(matrix: np.ndarray) -> Tuple[np.ndarray, float]:
    """Shift the diagonal when the smallest eigenvalue is below 1e-10."""
    lam_min = float(np.linalg.eigvalsh(matrix)[0])
    if lam_min >= SPD_EIGEN_FLOOR:
        return matrix, 0.0
    ridge = abs(lam_min) + SPD_RIDGE_PAD
    logger.warning(f"masked error covariance not SPD (λ_min={lam_min:.3e}); adding {ridge:.3e}·I")
    return matrix + ridge * np.eye(matrix.shape[0]), ridge


def apply_mask(base: np.ndarray, mask: np.ndarray) -> Tuple[np.ndarray, float]:
    """Hadamard product base ∘ mask, regularized if not SPD."""
    masked = np.asarray(base) * np.asarray(mask)
    return spd_guard((masked + masked.T) / 2.0)


def base_error_cov(calibration: CalibrationSpec, p: int, rng: np.random.Generator) -> np.ndarray:
    """
    Base error covariance before masking.

    Synthetic: variances ~ Uniform(low, high)·scale with equicorrelation
    base_correlation. UserMatrix: p assets drawn with replacement from a
    calibration pool.
    """
    if calibration.base_error_cov_source == BaseErrorCovSource.USER_MATRIX:
        _, pool = load_matrix_csv(calibration.base_error_cov_path)
        picks = rng.integers(0, pool.shape[0], size=p)
        return pool[np.ix_(picks, picks)]

    variances = rng.uniform(calibration.error_var_low, calibration.error_var_high, size=p)
    sds = np.sqrt(variances * calibration.error_var_scale)
    c = calibration.base_correlation
    corr = np.full((p, p), c)
    np.fill_diagonal(corr, 1.0)
    return corr * np.outer(sds, sds)


def build_true_covariance(config: SimConfig, seed: Optional[int] = None) -> TrueModel:
    """
    Draw (α, B, Σ_n) and assemble Σ_y = B cov(f) B' + Σ_n, μ = α + B E[f].

    Args:
        config: Design point
        seed: Draw seed (defaults to config.seed)
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    p, k = config.resolved_p(), config.n_factors
    calibration = config.calibration
    factor_mean, factor_cov = calibration.factor_moments(k)

    loadings = rng.uniform(calibration.beta_low, calibration.beta_high, size=(p, k))
    alpha = rng.normal(calibration.alpha_mean, calibration.alpha_sd, size=p)
    base = base_error_cov(calibration, p, rng)
    sigma_n, ridge = apply_mask(base, correlation_mask(config, p))

    sigma_y = loadings @ factor_cov @ loadings.T + sigma_n
    sigma_y = (sigma_y + sigma_y.T) / 2.0
    return TrueModel(
        sigma_n=sigma_n,
        sigma_y=sigma_y,
        mu=alpha + loadings @ factor_mean,
        loadings=loadings,
        factor_cov=factor_cov,
        factor_mean=factor_mean,
        alpha=alpha,
        ridge=ridge,
    )


def _time_labels(n: int) -> List[str]:
    width = max(4, len(str(n)))
    return [f"t{t + 1:0{width}d}" for t in range(n)]


def factor_names(k: int) -> List[str]:
    return [FACTOR_NAMES[i] if i < len(FACTOR_NAMES) else f"F{i + 1}" for i in range(k)]


def generate_panel(truth: TrueModel, n: int, seed: int) -> SimulatedPanel:
    """
    Simulate y_t = α + B f_t + u_t with Gaussian factors and errors.

    Returns:
        SimulatedPanel with the true errors kept for oracle diagnostics
    """
    rng = np.random.default_rng(seed)
    factors = rng.multivariate_normal(truth.factor_mean, truth.factor_cov, size=n).T
    errors = rng.multivariate_normal(np.zeros(truth.p), truth.sigma_n, size=n).T
    returns = truth.alpha[:, None] + truth.loadings @ factors + errors

    labels = _time_labels(n)
    width = max(4, len(str(truth.p)))
    asset_ids = [f"A{j + 1:0{width}d}" for j in range(truth.p)]
    return SimulatedPanel(
        returns=ReturnsPanel(returns, asset_ids, labels),
        factors=FactorPanel(factors, factor_names(truth.k), labels),
        true_errors=errors,
    )


def _inverse_spd(matrix: np.ndarray, which: str) -> np.ndarray:
    try:
        chol = cho_factor(matrix, lower=True)
    except LinAlgError as exc:
        raise SingularMatrixError(f"{which} is not symmetric positive definite", which=which) from exc
    inverse = cho_solve(chol, np.eye(matrix.shape[0]))
    return (inverse + inverse.T) / 2.0


def true_sharpe_quantities(sigma_y: np.ndarray, mu: np.ndarray, rho1: float, sigma: float = 0.04) -> TrueTargets:
    """Exact Sharpe-ratio targets from the direct inverse of Σ_y."""
    gamma = _inverse_spd(np.asarray(sigma_y, dtype=np.float64), "sigma_y")
    mu = np.asarray(mu, dtype=np.float64)
    msr = constrained_msr(gamma, mu)
    forms = afd(gamma, mu)
    return TrueTargets(
        gamma=gamma,
        gmv_sr=gmv_sharpe(gamma, mu),
        mmv_sr=markowitz_sharpe(gamma, mu, rho1),
        msr=msr.msr,
        msr_c=msr.msr_c,
        msr_star=msr.msr_star,
        sr_star=float(np.sqrt(mu @ gamma @ mu)),
        branch=msr.branch,
        a=forms.a,
        f=forms.f,
        d=forms.d,
    )


def oracle_nodewise_diagnostic(
    true_errors: np.ndarray,
    settings: NodewiseSettings = NodewiseSettings(),
    asset_ids: Sequence[str] = (),
) -> NodewisePrecision:
    """Nodewise regression on the true errors instead of factor residuals."""
    return nodewise_from_residuals(true_errors, settings, asset_ids)


def _squared_errors(estimate: float, target: float) -> Tuple[float, float]:
    abs_error = abs(estimate ** 2 - target ** 2)
    ratio_error = abs(estimate ** 2 / target ** 2 - 1.0) if target != 0.0 else float("nan")
    return abs_error, ratio_error


def sharpe_errors(
    gamma_hat: np.ndarray,
    mu_hat: np.ndarray,
    truth: TrueModel,
    targets: TrueTargets,
    rho1: float,
) -> Dict[str, Tuple[float, float]]:
    """
    |ŜR² - SR²| and |ŜR²/SR² - 1| per category.

    Core categories propagate numerical errors; plug-in categories that are
    undefined for this draw are NaN.
    """
    estimate = constrained_msr(gamma_hat, mu_hat)
    out = {
        "MSR": _squared_errors(estimate.msr_star, targets.msr_star),
        "OOS-MSR": _squared_errors(mos_sharpe(gamma_hat, mu_hat, truth.sigma_y, truth.mu), targets.sr_star),
        "GMV-SR": _squared_errors(gmv_sharpe(gamma_hat, mu_hat), targets.gmv_sr),
        "MKW-SR": _squared_errors(markowitz_sharpe(gamma_hat, mu_hat, rho1), targets.mmv_sr),
    }
    plug_ins = (
        ("GMV-SR-P", PortfolioKind.GMV, targets.gmv_sr),
        ("MKW-SR-P", PortfolioKind.MARKOWITZ, targets.mmv_sr),
        ("MSR-P", PortfolioKind.CONSTRAINED_MSR, targets.msr),
    )
    for name, kind, target in plug_ins:
        try:
            value = plugin_sharpe_with_estimated_weights(kind, gamma_hat, mu_hat, truth.sigma_y, truth.mu, rho1)
            out[name] = _squared_errors(value, target)
        except (NumericalError, ValidationError):
            out[name] = (float("nan"), float("nan"))
    return out


def sample_pinv_precision(returns: ReturnsPanel) -> np.ndarray:
    """Pseudo-inverse of the (1/n) sample covariance."""
    cov = np.cov(returns.values, bias=True)
    return np.linalg.pinv((cov + cov.T) / 2.0, hermitian=True)


def _run_replication(config: SimConfig, index: int, inner_threads: int) -> ReplicationRecord:
    seed = derive_seed(config.seed, "replication", index)
    record = ReplicationRecord(index=index, seed=seed, ok=False)
    started = time.perf_counter()
    try:
        truth = build_true_covariance(config, derive_seed(seed, "truth"))
        targets = true_sharpe_quantities(truth.sigma_y, truth.mu, config.rho1, config.sigma)
        record.targets = targets.snapshot()
        panel = generate_panel(truth, config.n, derive_seed(seed, "panel"))
        settings = dataclasses.replace(
            config.nodewise_settings(inner_threads), seed=derive_seed(seed, "nodewise")
        )

        fit = fit_ols(panel.returns, panel.factors)
        nodewise = nodewise_from_residuals(fit.residuals, settings, fit.asset_ids)
        precision = combine_smw(nodewise, fit)

        estimates = {Estimator.NODEWISE.value: precision.gamma}
        if Estimator.SAMPLE_PINV in config.estimators:
            estimates[Estimator.SAMPLE_PINV.value] = sample_pinv_precision(panel.returns)

        for estimator, gamma_hat in estimates.items():
            if estimator not in {e.value for e in config.estimators}:
                continue
            try:
                errors = sharpe_errors(gamma_hat, fit.sample_mean, truth, targets, config.rho1)
            except NumericalError as exc:
                if estimator == Estimator.NODEWISE.value:
                    raise
                logger.warning(f"replication {index}: {estimator} errors undefined ({exc})")
                errors = {c: (float("nan"), float("nan")) for c in CATEGORIES + PLUGIN_CATEGORIES}
            for category, (abs_error, ratio_error) in errors.items():
                record.errors[(estimator, category)] = abs_error
                record.ratio_errors[(estimator, category)] = ratio_error

        if config.oracle_diagnostic:
            omega_true = _inverse_spd(truth.sigma_n, "sigma_n")
            record.precision_error = float(np.max(np.abs(nodewise.omega_sym - omega_true)))
            oracle = oracle_nodewise_diagnostic(panel.true_errors, settings, fit.asset_ids)
            record.oracle_precision_error = float(np.max(np.abs(oracle.omega_sym - omega_true)))
        record.ok = True
    except NodewiseError as exc:
        record.message = f"{type(exc).__name__}: {exc}"
        logger.warning(f"replication {index} failed: {record.message}")
    record.runtime_seconds = time.perf_counter() - started
    logger.info(f"replication {index + 1}/{config.replications} done in {record.runtime_seconds:.2f}s")
    return record


def _nan_mean(values: List[float]) -> float:
    finite = [v for v in values if not np.isnan(v)]
    return float(np.mean(finite)) if finite else float("nan")


def run_simulation(config: SimConfig) -> SimReport:
    """
    Run all replications of one design point.

    Replications are dispatched over config.threads workers with seeds
    derived from (config.seed, replication index); failures are recorded.

    Usage:
        report = run_simulation(SimConfig(n=100, rho=0.5, replications=20))
        report.mean_errors[("nodewise", "OOS-MSR")]
    """
    started = time.perf_counter()
    parallel_reps = config.threads > 1 and config.replications > 1
    inner_threads = 1 if parallel_reps else config.threads
    logger.info(
        f"Simulation n={config.n}, p={config.resolved_p()}, {config.design_label()}, "
        f"{config.replications} replications, selector={config.selector.value}"
    )
    records = ordered_map(
        lambda r: _run_replication(config, r, inner_threads),
        range(config.replications),
        config.threads if parallel_reps else 1,
    )

    keys = [(e.value, c) for e in config.estimators for c in CATEGORIES + PLUGIN_CATEGORIES]
    successful = [r for r in records if r.ok]
    mean_errors = {key: _nan_mean([r.errors.get(key, np.nan) for r in successful]) for key in keys}
    mean_ratio = {key: _nan_mean([r.ratio_errors.get(key, np.nan) for r in successful]) for key in keys}
    failures = len(records) - len(successful)
    snapshot = successful[0].targets if successful else {}
    runtime = time.perf_counter() - started
    logger.info(f"Simulation finished: {failures} failed replication(s), {runtime:.1f}s")
    return SimReport(
        config=config,
        p=config.resolved_p(),
        records=records,
        mean_errors=mean_errors,
        mean_ratio_errors=mean_ratio,
        truth_snapshot=snapshot,
        failure_count=failures,
        runtime_seconds=runtime,
    )


def run_simulation_grid(configs: Sequence[SimConfig]) -> List[SimReport]:
    """Run a sweep of design points in order."""
    return [run_simulation(config) for config in configs]


def summary_table(reports: Sequence[SimReport], estimator: str = Estimator.NODEWISE.value) -> pd.DataFrame:
    """Mean absolute errors with designs as rows and (n, p-rule, category) as columns."""
    rows = [row for report in reports for row in report.rows() if row["estimator"] == estimator]
    frame = pd.DataFrame(rows)
    if frame.empty:
        return frame
    table = frame.pivot_table(
        index="design",
        columns=["n", "p_rule", "category"],
        values="mean_abs_error",
        aggfunc="first",
        sort=False,
    )
    return table
