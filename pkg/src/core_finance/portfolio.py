"""
Portfolio Engine.

Weight constructors and Sharpe-ratio estimators driven by a precision
matrix Γ and a mean vector μ:
- GMV: w = Γ1/(1'Γ1)
- Markowitz: minimum variance at target mean ρ₁
- Constrained maximum Sharpe ratio (branches on the sign of 1'Γμ)
- Maximum out-of-sample Sharpe under a risk bound σ
- Equal weight (baseline)
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, NamedTuple, Optional

import numpy as np

from ..errors import (
    AmbiguousBranchError,
    DegenerateFrontierError,
    NonPositiveFormError,
    ValidationError,
)

logger = logging.getLogger(__name__)

BRANCH_DEAD_ZONE = 1e-12
FRONTIER_THRESHOLD = 1e-12
COLLAPSE_TOLERANCE = 1e-10


class PortfolioKind(str, Enum):
    """Supported portfolio constructions."""
    GMV = "gmv"
    MARKOWITZ = "markowitz"
    CONSTRAINED_MSR = "constrained_msr"
    MAX_OOS = "max_oos"
    EQUAL_WEIGHT = "equal_weight"


@dataclass(frozen=True)
class AFD:
    """Scaled quadratic forms of Γ in the directions 1 and μ."""
    a: float  # 1'Γ1/p
    f: float  # 1'Γμ/p
    d: float  # μ'Γμ/p


@dataclass
class PortfolioResult:
    """Portfolio weights with construction parameters."""
    weights: np.ndarray
    kind: PortfolioKind
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def weight_sum(self) -> float:
        return float(self.weights.sum())

    @property
    def gross_leverage(self) -> float:
        return float(np.abs(self.weights).sum())


@dataclass(frozen=True)
class SharpeEstimates:
    """Per-period Sharpe-ratio estimates from (Γ̂, μ̂)."""
    gmv_sr: float
    mmv_sr: float
    msr: float
    msr_c: float
    msr_star: float
    sr_mos: float
    branch_indicator: int  # sign of 1'Γ̂μ̂


class MSREstimate(NamedTuple):
    msr: float
    msr_c: float
    msr_star: float
    branch: int


def _ones(p: int) -> np.ndarray:
    return np.ones(p)


def afd(gamma: np.ndarray, mu: np.ndarray) -> AFD:
    """A, F, D quadratic forms, each divided by p."""
    gamma = np.asarray(gamma, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    p = mu.shape[0]
    if gamma.shape != (p, p):
        raise ValidationError(f"Γ shape {gamma.shape} does not match μ length {p}", field="gamma")
    gamma_one = gamma @ _ones(p)
    gamma_mu = gamma @ mu
    return AFD(
        a=float(gamma_one.sum() / p),
        f=float(gamma_mu.sum() / p),
        d=float(mu @ gamma_mu / p),
    )


def portfolio_sharpe(weights: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> float:
    """(w'μ)/sqrt(w'Σw)."""
    variance = float(weights @ sigma @ weights)
    if not variance > 0.0:
        raise NonPositiveFormError(f"portfolio variance is not positive ({variance:.3e})")
    return float(weights @ mu) / np.sqrt(variance)


def gmv_weights(gamma: np.ndarray) -> PortfolioResult:
    """Global minimum-variance weights Γ1/(1'Γ1)."""
    gamma = np.asarray(gamma, dtype=np.float64)
    gamma_one = gamma @ _ones(gamma.shape[0])
    total = float(gamma_one.sum())
    if abs(total) < BRANCH_DEAD_ZONE:
        raise NonPositiveFormError(f"1'Γ1 is numerically zero ({total:.3e})")
    return PortfolioResult(weights=gamma_one / total, kind=PortfolioKind.GMV)


def gmv_sharpe(gamma: np.ndarray, mu: np.ndarray) -> float:
    """√p·F·A^(-1/2)."""
    forms = afd(gamma, mu)
    if not forms.a > 0.0:
        raise NonPositiveFormError(f"1'Γ1 must be positive, got {forms.a * len(mu):.3e}")
    return float(np.sqrt(len(mu)) * forms.f / np.sqrt(forms.a))


def _frontier_collapsed(forms: AFD, rho1: float) -> bool:
    """True when AD - F² vanishes and ρ₁ is the only attainable mean F/A."""
    attainable = forms.f / forms.a
    return abs(rho1 - attainable) <= COLLAPSE_TOLERANCE * max(1.0, abs(attainable))


def markowitz_weights(gamma: np.ndarray, mu: np.ndarray, rho1: float) -> PortfolioResult:
    """
    Minimum-variance weights with w'1 = 1 and w'μ = ρ₁.

    w = [(D - ρ₁F)/(AD - F²)]·Γ1/p + [(ρ₁A - F)/(AD - F²)]·Γμ/p

    Raises:
        DegenerateFrontierError: If AD - F² <= 1e-12 and ρ₁ is not attainable
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    p = len(mu)
    forms = afd(gamma, mu)
    det = forms.a * forms.d - forms.f ** 2
    params = {"rho1": rho1}
    if det <= FRONTIER_THRESHOLD:
        if forms.a > 0.0 and _frontier_collapsed(forms, rho1):
            logger.warning("Markowitz frontier collapsed to a point; using GMV weights")
            result = gmv_weights(gamma)
            return PortfolioResult(result.weights, PortfolioKind.MARKOWITZ, {**params, "collapsed": True})
        raise DegenerateFrontierError(f"degenerate efficient frontier: AD - F² = {det:.3e}")

    c_one = (forms.d - rho1 * forms.f) / det
    c_mu = (rho1 * forms.a - forms.f) / det
    weights = c_one * (gamma @ _ones(p)) / p + c_mu * (gamma @ mu) / p
    return PortfolioResult(weights, PortfolioKind.MARKOWITZ, params)


def markowitz_sharpe(gamma: np.ndarray, mu: np.ndarray, rho1: float) -> float:
    """ρ₁·sqrt(p(AD - F²)/(Aρ₁² - 2Fρ₁ + D))."""
    forms = afd(gamma, mu)
    p = len(mu)
    det = forms.a * forms.d - forms.f ** 2
    if det <= FRONTIER_THRESHOLD and forms.a > 0.0 and _frontier_collapsed(forms, rho1):
        return gmv_sharpe(gamma, mu)
    quad = forms.a * rho1 ** 2 - 2.0 * forms.f * rho1 + forms.d
    if not quad > 0.0:
        raise NonPositiveFormError(f"Markowitz variance form is not positive ({quad:.3e})")
    ratio = p * det / quad
    if ratio < 0.0:
        raise NonPositiveFormError(f"Markowitz Sharpe radicand is negative ({ratio:.3e})")
    return float(rho1 * np.sqrt(ratio))


def constrained_msr(gamma: np.ndarray, mu: np.ndarray) -> MSREstimate:
    """
    Maximum Sharpe ratio estimates under unit-sum weights.

    msr² = μ'Γμ, msr_c² = μ'Γμ - (1'Γμ)²/(1'Γ1); msr_star picks msr when
    1'Γμ > 0 and msr_c otherwise.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    p = len(mu)
    gamma_mu = gamma @ mu
    msr_sq = float(mu @ gamma_mu)
    if msr_sq < -BRANCH_DEAD_ZONE:
        raise NonPositiveFormError(f"μ'Γμ is negative ({msr_sq:.3e}); Γ is not positive semi-definite")
    msr_sq = max(msr_sq, 0.0)

    one_gamma_one = float((gamma @ _ones(p)).sum())
    if not one_gamma_one > 0.0:
        raise NonPositiveFormError(f"1'Γ1 must be positive, got {one_gamma_one:.3e}")
    one_gamma_mu = float(gamma_mu.sum())
    msr_c_sq = max(msr_sq - one_gamma_mu ** 2 / one_gamma_one, 0.0)

    msr = float(np.sqrt(msr_sq))
    msr_c = min(float(np.sqrt(msr_c_sq)), msr)
    branch = int(np.sign(one_gamma_mu))
    msr_star = msr if branch > 0 else msr_c
    return MSREstimate(msr=msr, msr_c=msr_c, msr_star=msr_star, branch=branch)


def constrained_msr_weights(gamma: np.ndarray, mu: np.ndarray, delta: float = 1e6) -> PortfolioResult:
    """
    Weights attaining the constrained maximum Sharpe ratio.

    Positive branch (1'Γμ > 0): w = Γμ/(1'Γμ).
    Negative branch: w = (δu', 1 - δ1'u)' with u the normalized projection
    of z = Γ(I - 11'Γ/(1'Γ1))μ/MSR_c onto the unit-sum-zero coordinates.

    Raises:
        AmbiguousBranchError: If |1'Γμ| < 1e-12
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    p = len(mu)
    gamma_mu = gamma @ mu
    one_gamma_mu = float(gamma_mu.sum())
    if abs(one_gamma_mu) < BRANCH_DEAD_ZONE:
        raise AmbiguousBranchError(f"1'Γμ is numerically zero ({one_gamma_mu:.3e}); branch undefined")

    if one_gamma_mu > 0.0:
        return PortfolioResult(gamma_mu / one_gamma_mu, PortfolioKind.CONSTRAINED_MSR, {"branch": 1})

    if not delta > 0.0:
        raise ValidationError(f"δ must be positive, got {delta}", field="delta")
    estimate = constrained_msr(gamma, mu)
    if not estimate.msr_c > 0.0:
        raise NonPositiveFormError("MSR_c is zero; negative-branch weights are undefined")

    gamma_one = gamma @ _ones(p)
    z_max = (gamma_mu - gamma_one * one_gamma_mu / gamma_one.sum()) / estimate.msr_c
    a_mat = np.vstack([np.eye(p - 1), -np.ones((1, p - 1))])  # p x (p-1)
    projected = np.linalg.solve(a_mat.T @ a_mat, a_mat.T @ z_max)
    norm = np.sqrt(projected @ projected)
    if not norm > 0.0:
        raise NonPositiveFormError("z_max has no component in the unit-sum-zero space")
    u_max = projected / norm
    weights = np.append(delta * u_max, 1.0 - delta * u_max.sum())
    return PortfolioResult(weights, PortfolioKind.CONSTRAINED_MSR, {"branch": -1, "delta": delta})


def mos_weights(gamma: np.ndarray, mu: np.ndarray, sigma: float) -> PortfolioResult:
    """Return-maximizing weights σΓμ/sqrt(μ'Γμ) under the risk bound σ."""
    gamma = np.asarray(gamma, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if not sigma > 0.0:
        raise ValidationError(f"σ must be positive, got {sigma}", field="sigma")
    gamma_mu = gamma @ mu
    quad = float(mu @ gamma_mu)
    if not quad > 0.0:
        raise NonPositiveFormError(f"μ'Γμ must be positive ({quad:.3e}); μ is zero or Γ is not PD")
    return PortfolioResult(sigma * gamma_mu / np.sqrt(quad), PortfolioKind.MAX_OOS, {"sigma": sigma})


def mos_sharpe(
    gamma_hat: np.ndarray,
    mu_hat: np.ndarray,
    sigma_y_true: np.ndarray,
    mu_true: np.ndarray,
) -> float:
    """(μ'Γ̂μ̂)/sqrt(μ̂'Γ̂'Σ_yΓ̂μ̂): estimated weights judged on true moments."""
    direction = np.asarray(gamma_hat) @ np.asarray(mu_hat)
    denom = float(direction @ np.asarray(sigma_y_true) @ direction)
    if not denom > 0.0:
        raise NonPositiveFormError(f"out-of-sample variance form is not positive ({denom:.3e})")
    return float(np.asarray(mu_true) @ direction) / np.sqrt(denom)


def equal_weights(p: int) -> PortfolioResult:
    return PortfolioResult(np.full(p, 1.0 / p), PortfolioKind.EQUAL_WEIGHT)


def build_portfolio(
    kind: PortfolioKind,
    gamma: Optional[np.ndarray],
    mu: np.ndarray,
    rho1: float = 0.01,
    sigma: float = 0.04,
    delta: float = 1e6,
) -> PortfolioResult:
    """Dispatch to the constructor for kind."""
    kind = PortfolioKind(kind)
    if kind == PortfolioKind.EQUAL_WEIGHT:
        return equal_weights(len(mu))
    if kind == PortfolioKind.GMV:
        return gmv_weights(gamma)
    if kind == PortfolioKind.MARKOWITZ:
        return markowitz_weights(gamma, mu, rho1)
    if kind == PortfolioKind.CONSTRAINED_MSR:
        return constrained_msr_weights(gamma, mu, delta)
    return mos_weights(gamma, mu, sigma)


def plugin_sharpe_with_estimated_weights(
    kind: PortfolioKind,
    gamma_hat: np.ndarray,
    mu_hat: np.ndarray,
    sigma_y_true: np.ndarray,
    mu_true: np.ndarray,
    rho1: float = 0.01,
) -> float:
    """
    Sharpe ratio of estimated weights under true moments: (ŵ'μ)/sqrt(ŵ'Σ_yŵ).

    Only GMV, Markowitz and positive-branch constrained MSR are defined.
    """
    kind = PortfolioKind(kind)
    if kind == PortfolioKind.GMV:
        weights = gmv_weights(gamma_hat).weights
    elif kind == PortfolioKind.MARKOWITZ:
        weights = markowitz_weights(gamma_hat, mu_hat, rho1).weights
    elif kind == PortfolioKind.CONSTRAINED_MSR:
        result = constrained_msr_weights(gamma_hat, mu_hat)
        if result.params["branch"] < 0:
            raise ValidationError(
                "plug-in Sharpe is only defined for the positive constrained-MSR branch", field="kind"
            )
        weights = result.weights
    else:
        raise ValidationError(f"plug-in Sharpe is not defined for {kind.value}", field="kind")
    return portfolio_sharpe(weights, np.asarray(mu_true), np.asarray(sigma_y_true))


def sharpe_estimates(
    gamma: np.ndarray,
    mu: np.ndarray,
    rho1: float,
    sigma_y_eval: np.ndarray,
    mu_eval: Optional[np.ndarray] = None,
) -> SharpeEstimates:
    """
    All Sharpe-ratio estimates for (Γ̂, μ̂).

    Args:
        gamma: Estimated precision of returns
        mu: Estimated mean
        rho1: Markowitz target mean
        sigma_y_eval: Covariance used to judge the out-of-sample weights
        mu_eval: Mean used in the out-of-sample numerator (defaults to mu)
    """
    msr = constrained_msr(gamma, mu)
    return SharpeEstimates(
        gmv_sr=gmv_sharpe(gamma, mu),
        mmv_sr=markowitz_sharpe(gamma, mu, rho1),
        msr=msr.msr,
        msr_c=msr.msr_c,
        msr_star=msr.msr_star,
        sr_mos=mos_sharpe(gamma, mu, sigma_y_eval, mu if mu_eval is None else mu_eval),
        branch_indicator=msr.branch,
    )
