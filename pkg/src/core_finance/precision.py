"""
Precision Matrix Engine.

Residual-based nodewise regression and the returns-precision assembly:
1. regress each residual row Û_j on the other rows with a lasso (GIC or CV)
2. τ̂_j² = Û_j'(Û_j - Û_{-j}'γ̂_j)/n, Ω̂_jj = 1/τ̂_j², Ω̂_{j,-j} = -γ̂_j/τ̂_j²
3. Ω̂_sym = (Ω̂ + Ω̂')/2
4. Γ̂ = Ω̂ - Ω̂B̂[ĉov(f)^-1 + B̂'Ω̂_sym B̂]^-1 B̂'Ω̂

Also holds the structured covariances used as exact oracles (Toeplitz and
its tridiagonal inverse, block-diagonal direct sums).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve, solve, toeplitz

from ..utils import derive_seed, ordered_map
from ..errors import DegenerateAssetError, SingularMatrixError, ValidationError
from .factor_model import FactorModelFit
from .lasso_path import (
    DEFAULT_GRID_SIZE,
    DEFAULT_LAMBDA_MIN_RATIO,
    CrossProducts,
    cv_test_folds,
    path_from_cross_products,
    select_cv_from_cross_products,
    select_gic,
)

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
DEGENERATE_TAU_RATIO = 1e-12


class Selector(str, Enum):
    """Tuning-parameter selector for the nodewise lasso."""
    GIC = "gic"
    CV = "cv"


@dataclass(frozen=True)
class NodewiseSettings:
    """Knobs shared by every per-asset regression."""
    selector: Selector = Selector.GIC
    cv_folds: int = 10
    cv_blocked: bool = False
    seed: int = 0
    grid_size: int = DEFAULT_GRID_SIZE
    lambda_min_ratio: float = DEFAULT_LAMBDA_MIN_RATIO
    standardize: bool = True
    threads: int = 1


@dataclass(frozen=True)
class NodewiseRow:
    """Result of one asset's regression."""
    gamma: np.ndarray  # p - 1
    tau_sq: float
    lam: float


@dataclass(frozen=True)
class NodewisePrecision:
    """Nodewise estimate of the error precision matrix."""
    omega: np.ndarray  # p x p, not symmetric in general
    omega_sym: np.ndarray  # p x p
    gammas: np.ndarray  # p x (p - 1), row j holds γ̂_j
    tau_sq: np.ndarray  # p
    lambdas: np.ndarray  # p, selected λ_j
    selector: Selector
    asset_ids: Tuple[str, ...] = ()


@dataclass(frozen=True)
class ReturnsPrecision:
    """Precision matrix of returns from the Woodbury combination."""
    gamma: np.ndarray  # p x p
    k_core: np.ndarray  # K x K, inverse of the bracket
    nodewise: NodewisePrecision
    fit: Optional[FactorModelFit]
    factor_cov_condition: float
    bracket_condition: float


def symmetrize(omega: np.ndarray) -> np.ndarray:
    """(Ω + Ω')/2, exactly symmetric."""
    omega = np.asarray(omega, dtype=np.float64)
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        raise ValidationError("symmetrize needs a square matrix", field="omega")
    return (omega + omega.T) / 2.0


def _nodewise_row(
    j: int,
    products: np.ndarray,
    sums: np.ndarray,
    residuals: np.ndarray,
    asset_id: str,
    settings: NodewiseSettings,
) -> NodewiseRow:
    p, n = residuals.shape
    others = np.delete(np.arange(p), j)
    full = CrossProducts(
        zz=products[np.ix_(others, others)],
        zr=products[others, j],
        rr=float(products[j, j]),
        z_sum=sums[others],
        n=n,
    )
    lasso_path = path_from_cross_products(
        full, settings.grid_size, settings.lambda_min_ratio, settings.standardize
    )

    if settings.selector == Selector.GIC:
        selection = select_gic(lasso_path, p, n)
    else:
        folds = []
        for idx in cv_test_folds(n, settings.cv_folds, derive_seed(settings.seed, asset_id), settings.cv_blocked):
            block = residuals[:, idx]
            sub = block @ block.T
            folds.append(
                CrossProducts(
                    zz=sub[np.ix_(others, others)],
                    zr=sub[others, j],
                    rr=float(sub[j, j]),
                    z_sum=block[others].sum(axis=1),
                    n=len(idx),
                )
            )
        selection = select_cv_from_cross_products(full, folds, lasso_path.lambdas, settings.standardize)

    gamma = selection.coefficients
    tau_sq = (full.rr - full.zr @ gamma) / n
    row = residuals[j]
    variance = float(np.var(row))
    if not tau_sq > DEGENERATE_TAU_RATIO * variance:
        raise DegenerateAssetError(
            f"asset '{asset_id}' (index {j}) is perfectly explained by the others: "
            f"τ̂²={tau_sq:.3e}, var={variance:.3e}",
            asset=asset_id,
        )
    logger.debug(f"nodewise {asset_id}: λ={selection.lam:.4g}, q={np.count_nonzero(gamma)}, τ̂²={tau_sq:.4g}")
    return NodewiseRow(gamma=gamma, tau_sq=float(tau_sq), lam=selection.lam)


def nodewise_from_residuals(
    residuals: np.ndarray,
    settings: NodewiseSettings = NodewiseSettings(),
    asset_ids: Sequence[str] = (),
) -> NodewisePrecision:
    """
    Nodewise regression on a p x n residual (or error) matrix.

    The p regressions share the residual second moments read-only and are
    dispatched over settings.threads workers; row order is fixed.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    p, n = residuals.shape
    if p < 2:
        raise ValidationError(f"nodewise regression needs p >= 2, got {p}", field="p")
    ids = tuple(asset_ids) if asset_ids else tuple(f"asset_{j}" for j in range(p))

    products = residuals @ residuals.T
    sums = residuals.sum(axis=1)

    rows: List[NodewiseRow] = ordered_map(
        lambda j: _nodewise_row(j, products, sums, residuals, ids[j], settings),
        range(p),
        settings.threads,
    )

    omega = np.zeros((p, p))
    gammas = np.zeros((p, p - 1))
    for j, row in enumerate(rows):
        others = np.delete(np.arange(p), j)
        omega[j, j] = 1.0 / row.tau_sq
        omega[j, others] = -row.gamma / row.tau_sq
        gammas[j] = row.gamma

    tau_sq = np.array([row.tau_sq for row in rows])
    lambdas = np.array([row.lam for row in rows])
    logger.info(
        f"Nodewise ({settings.selector.value}): p={p}, n={n}, "
        f"mean nonzeros/row={np.count_nonzero(gammas) / p:.1f}"
    )
    return NodewisePrecision(
        omega=omega,
        omega_sym=symmetrize(omega),
        gammas=gammas,
        tau_sq=tau_sq,
        lambdas=lambdas,
        selector=settings.selector,
        asset_ids=ids,
    )


def fit_nodewise(
    fit: FactorModelFit,
    selector: Selector = Selector.GIC,
    cv_k: int = 10,
    seed: int = 0,
    **options,
) -> NodewisePrecision:
    """
    Feasible nodewise regression on factor-model residuals.

    Args:
        fit: Factor model fit providing Û
        selector: GIC or CV
        cv_k: Folds for CV
        seed: Base seed; asset j's folds use derive_seed(seed, asset_id)
        **options: Remaining NodewiseSettings fields (grid_size, threads, ...)
    """
    settings = NodewiseSettings(selector=Selector(selector), cv_folds=cv_k, seed=seed, **options)
    return nodewise_from_residuals(fit.residuals, settings, fit.asset_ids)


def _condition(matrix: np.ndarray) -> float:
    if not np.all(np.isfinite(matrix)):
        return float("inf")
    return float(np.linalg.cond(matrix))


def woodbury_precision(
    omega: np.ndarray,
    omega_sym: np.ndarray,
    loadings: np.ndarray,
    factor_cov: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """
    Γ = Ω - ΩB[cov(f)^-1 + B'Ω_sym B]^-1 B'Ω.

    Returns:
        (gamma, k_core, cond(cov(f)), cond(bracket))
    """
    k = factor_cov.shape[0]
    cond_f = _condition(factor_cov)
    if cond_f > MAX_CONDITION:
        raise SingularMatrixError(
            f"factor covariance is singular or ill-conditioned (cond={cond_f:.3e})",
            which="factor_cov",
            condition=cond_f,
        )
    try:
        cov_f_inv = cho_solve(cho_factor(factor_cov, lower=True), np.eye(k))
    except LinAlgError as exc:
        raise SingularMatrixError(
            "factor covariance is not positive definite", which="factor_cov", condition=cond_f
        ) from exc

    bracket = cov_f_inv + loadings.T @ omega_sym @ loadings
    bracket = (bracket + bracket.T) / 2.0
    cond_b = _condition(bracket)
    if cond_b > MAX_CONDITION:
        raise SingularMatrixError(
            f"Woodbury bracket is singular or ill-conditioned (cond={cond_b:.3e})",
            which="bracket",
            condition=cond_b,
        )
    k_core = solve(bracket, np.eye(k), assume_a="sym")
    k_core = (k_core + k_core.T) / 2.0

    left = omega @ loadings
    right = loadings.T @ omega
    gamma = omega - left @ k_core @ right
    return gamma, k_core, cond_f, cond_b


def combine_smw(nodewise: NodewisePrecision, fit: FactorModelFit) -> ReturnsPrecision:
    """
    Assemble Γ̂ from Ω̂ and the factor fit.

    Ω̂_sym enters only inside the bracket; plain Ω̂ multiplies on both sides.
    """
    gamma, k_core, cond_f, cond_b = woodbury_precision(
        nodewise.omega, nodewise.omega_sym, fit.loadings, fit.factor_cov
    )
    logger.debug(f"SMW combine: cond(cov f)={cond_f:.3e}, cond(bracket)={cond_b:.3e}")
    return ReturnsPrecision(
        gamma=gamma,
        k_core=k_core,
        nodewise=nodewise,
        fit=fit,
        factor_cov_condition=cond_f,
        bracket_condition=cond_b,
    )


def estimate_returns_precision(
    fit: FactorModelFit,
    settings: NodewiseSettings = NodewiseSettings(),
) -> ReturnsPrecision:
    """Full pipeline from a factor fit to Γ̂."""
    nodewise = nodewise_from_residuals(fit.residuals, settings, fit.asset_ids)
    return combine_smw(nodewise, fit)


def _check_rho(rho: float) -> None:
    if not -1.0 < rho < 1.0:
        raise ValidationError(f"Toeplitz ρ must lie in (-1, 1), got {rho}", field="rho")


def toeplitz_cov(rho: float, p: int) -> np.ndarray:
    """Correlation matrix with entries ρ^|i-j|."""
    _check_rho(rho)
    if p < 1:
        raise ValidationError(f"p must be >= 1, got {p}", field="p")
    return toeplitz(float(rho) ** np.arange(p))


def toeplitz_precision_closed_form(rho: float, p: int) -> np.ndarray:
    """Tridiagonal inverse of toeplitz_cov(rho, p)."""
    _check_rho(rho)
    if p < 2:
        raise ValidationError(f"p must be >= 2, got {p}", field="p")
    denom = 1.0 - rho * rho
    diagonal = np.full(p, (1.0 + rho * rho) / denom)
    diagonal[0] = diagonal[-1] = 1.0 / denom
    off = np.full(p - 1, -rho / denom)
    return np.diag(diagonal) + np.diag(off, 1) + np.diag(off, -1)


def block_diag_cov(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Direct sum of square SPD blocks."""
    if not blocks:
        raise ValidationError("block_diag_cov needs at least one block", field="blocks")
    checked = []
    for i, block in enumerate(blocks):
        block = np.atleast_2d(np.asarray(block, dtype=np.float64))
        if block.ndim != 2 or block.shape[0] != block.shape[1]:
            raise ValidationError(f"block {i} is not square: shape {block.shape}", field="blocks")
        try:
            np.linalg.cholesky(block)
        except np.linalg.LinAlgError:
            raise ValidationError(f"block {i} is not positive definite", field="blocks") from None
        checked.append(block)
    return block_diag(*checked)
