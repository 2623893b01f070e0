"""
Observed-factor model estimation.

Fits y_t = B f_t + u_t by least squares (no intercept) and extracts:
- loadings B̂ = (YX')(XX')^-1
- residuals Û = Y - B̂X, i.e. every row annihilated by the factor span
- factor covariance n^-1 XX' - n^-2 X1 1'X'
- sample mean of returns
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..parsers.panel_csv import FactorPanel, ReturnsPanel, check_alignment
from ..errors import SingularMatrixError

logger = logging.getLogger(__name__)

MAX_GRAM_CONDITION = 1e12


@dataclass(frozen=True)
class FactorModelFit:
    """OLS fit of the observed-factor model."""
    loadings: np.ndarray  # p x K
    residuals: np.ndarray  # p x n
    factor_cov: np.ndarray  # K x K
    sample_mean: np.ndarray  # p
    gram_inverse: np.ndarray  # K x K, (XX')^-1
    asset_ids: Tuple[str, ...]
    factor_ids: Tuple[str, ...]
    gram_condition: float

    @property
    def p(self) -> int:
        return self.residuals.shape[0]

    @property
    def n(self) -> int:
        return self.residuals.shape[1]

    @property
    def k(self) -> int:
        return self.loadings.shape[1]


def sample_mean(returns: ReturnsPanel) -> np.ndarray:
    """Time average of each asset's returns."""
    return returns.values.mean(axis=1)


def factor_covariance(x: np.ndarray) -> np.ndarray:
    """n^-1 XX' - n^-2 X1 1'X' for a K x n factor matrix."""
    n = x.shape[1]
    total = x.sum(axis=1)
    cov = (x @ x.T) / n - np.outer(total, total) / (n * n)
    return (cov + cov.T) / 2.0


def fit_ols_arrays(
    y: np.ndarray,
    x: np.ndarray,
    asset_ids: Tuple[str, ...] = (),
    factor_ids: Tuple[str, ...] = (),
) -> FactorModelFit:
    """
    Least-squares factor model on raw arrays.

    Args:
        y: p x n returns
        x: K x n factors

    Returns:
        FactorModelFit

    Raises:
        SingularMatrixError: If XX' has condition number above 1e12
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    names = ", ".join(factor_ids) if factor_ids else f"{x.shape[0]} factor(s)"

    gram = x @ x.T
    condition = float(np.linalg.cond(gram)) if np.any(gram) else float("inf")
    if not np.isfinite(condition) or condition > MAX_GRAM_CONDITION:
        raise SingularMatrixError(
            f"factor Gram matrix XX' is singular or ill-conditioned (cond={condition:.3e}) for [{names}]",
            which="factor_gram",
            condition=condition,
        )
    try:
        chol = cho_factor(gram, lower=True)
    except LinAlgError as exc:
        raise SingularMatrixError(
            f"factor Gram matrix XX' is not positive definite for [{names}]", which="factor_gram"
        ) from exc

    k = x.shape[0]
    gram_inverse = cho_solve(chol, np.eye(k))
    loadings = cho_solve(chol, x @ y.T).T
    residuals = y - loadings @ x

    logger.debug(f"OLS factor fit: p={y.shape[0]}, K={k}, n={y.shape[1]}, cond(XX')={condition:.3e}")

    return FactorModelFit(
        loadings=loadings,
        residuals=residuals,
        factor_cov=factor_covariance(x),
        sample_mean=y.mean(axis=1),
        gram_inverse=(gram_inverse + gram_inverse.T) / 2.0,
        asset_ids=tuple(asset_ids),
        factor_ids=tuple(factor_ids),
        gram_condition=condition,
    )


def fit_ols(returns: ReturnsPanel, factors: FactorPanel) -> FactorModelFit:
    """
    Fit the factor model to aligned panels.

    Usage:
        fit = fit_ols(returns, factors)
        fit.residuals  # p x n, orthogonal to every factor row
    """
    check_alignment(returns, factors)
    return fit_ols_arrays(returns.values, factors.values, returns.asset_ids, factors.factor_ids)
