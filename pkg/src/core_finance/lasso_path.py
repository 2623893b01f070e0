"""
Lasso Path Engine.

Cyclic coordinate descent for

    minimize  (1/n)||r - Zg||^2 + 2λ||g||_1

working on cross-product moments (Z'Z/n, Z'r/n) so many regressions can
share one second-moment matrix. Provides:
- solve: single λ, KKT-certified
- path: log-spaced λ grid with warm starts
- select_gic / select_cv: tuning-parameter selectors
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numba import njit
from sklearn.model_selection import KFold

from ..errors import LassoConvergenceError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_GRID_SIZE = 100
DEFAULT_LAMBDA_MIN_RATIO = 1e-3
KKT_TOLERANCE = 1e-7
CHANGE_TOLERANCE = 1e-9
MAX_SWEEPS = 10_000
MAX_GRADIENT_REFRESHES = 5
KKT_STOP_TOLERANCE = 1e-2 * KKT_TOLERANCE
KKT_STOP_AFTER_SWEEPS = 200


@njit(cache=True, nogil=True)
def _coordinate_descent(gram, coef, grad, lam, tol, kkt_tol, kkt_after, max_sweeps):
    """
    Cyclic coordinate descent on the Gram form, updating coef and grad in place.

    grad holds Z'(r - Zg)/n for the current coef on entry and on exit.
    Stops when the largest coefficient change falls below tol * (1 + max|g|),
    or, after kkt_after sweeps, when the running KKT violation is below
    kkt_tol. The second rule ends runs drifting along flat directions of a
    rank-deficient Gram matrix. Returns (sweeps used, converged flag).
    """
    m = coef.shape[0]
    for sweep in range(max_sweeps):
        max_change = 0.0
        max_abs = 0.0
        for k in range(m):
            gkk = gram[k, k]
            if gkk <= 0.0:
                continue
            old = coef[k]
            rho = grad[k] + gkk * old
            if rho > lam:
                new = (rho - lam) / gkk
            elif rho < -lam:
                new = (rho + lam) / gkk
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                for i in range(m):
                    grad[i] -= gram[i, k] * delta
                coef[k] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
            if abs(new) > max_abs:
                max_abs = abs(new)
        if max_change < tol * (1.0 + max_abs):
            return sweep + 1, True
        if sweep + 1 >= kkt_after:
            worst = 0.0
            for k in range(m):
                if coef[k] > 0.0:
                    v = abs(grad[k] - lam)
                elif coef[k] < 0.0:
                    v = abs(grad[k] + lam)
                else:
                    v = abs(grad[k]) - lam
                if v > worst:
                    worst = v
            if worst < kkt_tol:
                return sweep + 1, True
    return max_sweeps, False


@dataclass(frozen=True)
class LassoProblem:
    """A lasso regression of response on the design columns."""
    design: np.ndarray  # n x m
    response: np.ndarray  # n
    standardize: bool = True

    def __post_init__(self):
        design = np.asarray(self.design, dtype=np.float64)
        response = np.asarray(self.response, dtype=np.float64).ravel()
        if design.ndim == 1:
            design = design[:, None]
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "response", response)
        if design.shape[1] < 1:
            raise ValidationError("design needs at least one column", field="design")
        if design.shape[0] < 2:
            raise ValidationError("lasso needs at least 2 observations", field="design")
        if response.shape[0] != design.shape[0]:
            raise ValidationError("response length does not match design rows", field="response")
        if not (np.all(np.isfinite(design)) and np.all(np.isfinite(response))):
            raise ValidationError("lasso inputs contain non-finite entries", field="design")

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def m(self) -> int:
        return self.design.shape[1]


@dataclass(frozen=True)
class GramSystem:
    """Normalized moments in working (possibly standardized) coordinates."""
    gram: np.ndarray  # m x m, Z~'Z~/n
    corr: np.ndarray  # m, Z~'r/n
    yy: float  # r'r/n
    n: int
    scale: np.ndarray  # working column = original column / scale

    def mean_square_residual(self, coef_working: np.ndarray) -> np.ndarray:
        """||r - Z~g~||_n^2 for one coefficient vector or a matrix of columns."""
        c = np.asarray(coef_working)
        if c.ndim == 1:
            return self.yy - 2.0 * self.corr @ c + c @ self.gram @ c
        return self.yy - 2.0 * (self.corr @ c) + np.einsum("il,il->l", c, self.gram @ c)

    @property
    def lambda_max(self) -> float:
        return float(np.max(np.abs(self.corr)))


@dataclass(frozen=True)
class CrossProducts:
    """Raw (unnormalized) sums Z'Z, Z'r, r'r and column sums over n rows."""
    zz: np.ndarray
    zr: np.ndarray
    rr: float
    z_sum: np.ndarray
    n: int

    @classmethod
    def from_data(cls, design: np.ndarray, response: np.ndarray) -> "CrossProducts":
        return cls(
            zz=design.T @ design,
            zr=design.T @ response,
            rr=float(response @ response),
            z_sum=design.sum(axis=0),
            n=design.shape[0],
        )

    def __sub__(self, other: "CrossProducts") -> "CrossProducts":
        return CrossProducts(
            zz=self.zz - other.zz,
            zr=self.zr - other.zr,
            rr=self.rr - other.rr,
            z_sum=self.z_sum - other.z_sum,
            n=self.n - other.n,
        )

    def system(self, standardize: bool) -> GramSystem:
        """Normalize by n and, optionally, scale columns to unit standard deviation."""
        n = self.n
        gram = self.zz / n
        corr = self.zr / n
        if standardize:
            second = np.clip(np.diag(gram).copy(), 0.0, None)
            mean = self.z_sum / n
            # 1/n (population) standard deviation, matching the 1/n Gram normalization;
            # it differs from the n-1 sample SD by a constant factor that the
            # de-standardized coefficients absorb at a rescaled λ
            sd = np.sqrt(np.clip(second - mean * mean, 0.0, None))
            rms = np.sqrt(second)
            # constant columns fall back to their root-mean-square, all-zero columns to 1
            scale = np.where(sd > 1e-6 * rms, sd, rms)
            scale = np.where(scale > 0.0, scale, 1.0)
            gram = gram / np.outer(scale, scale)
            corr = corr / scale
        else:
            scale = np.ones_like(corr)
        return GramSystem(
            gram=np.ascontiguousarray(gram),
            corr=np.ascontiguousarray(corr),
            yy=self.rr / n,
            n=n,
            scale=scale,
        )


@dataclass(frozen=True)
class LassoPath:
    """Solutions along a descending λ grid."""
    lambdas: np.ndarray  # L, strictly decreasing
    coefficients: np.ndarray  # m x L, original scale
    ssr: np.ndarray  # L, sum of squared residuals
    nonzero_counts: np.ndarray  # L
    n_obs: int
    lambda_max: float
    kkt_violations: np.ndarray  # L, in working coordinates


class LassoSelection(NamedTuple):
    """A selected grid point."""
    lam: float
    coefficients: np.ndarray
    score: float
    index: int


def kkt_violation(gram: np.ndarray, corr: np.ndarray, coef: np.ndarray, lam: float) -> float:
    """Largest violation of the lasso optimality conditions."""
    grad = corr - gram @ coef
    active = coef != 0.0
    viol_active = np.abs(grad[active] - lam * np.sign(coef[active]))
    viol_inactive = np.clip(np.abs(grad[~active]) - lam, 0.0, None)
    worst = 0.0
    if viol_active.size:
        worst = max(worst, float(viol_active.max()))
    if viol_inactive.size:
        worst = max(worst, float(viol_inactive.max()))
    return worst


def _solve_system(system: GramSystem, lam: float, coef: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Solve in place from the warm start coef; returns (coef, kkt violation).

    The result is accepted only with an exact KKT violation <= KKT_TOLERANCE.
    A sweep cap hit with a certified solution is not an error.
    """
    violation = kkt_violation(system.gram, system.corr, coef, lam)
    for _ in range(MAX_GRADIENT_REFRESHES):
        grad = system.corr - system.gram @ coef
        _, converged = _coordinate_descent(
            system.gram,
            coef,
            grad,
            float(lam),
            CHANGE_TOLERANCE,
            KKT_STOP_TOLERANCE,
            KKT_STOP_AFTER_SWEEPS,
            MAX_SWEEPS,
        )
        violation = kkt_violation(system.gram, system.corr, coef, lam)
        if violation <= KKT_TOLERANCE:
            if not converged:
                logger.debug(f"sweep cap reached at λ={lam:.6g} with KKT violation {violation:.3e}")
            return coef, violation
        if not converged:
            raise LassoConvergenceError(
                f"coordinate descent did not converge in {MAX_SWEEPS} sweeps at λ={lam:.6g} "
                f"(KKT violation {violation:.3e})",
                lam=float(lam),
                kkt_violation=violation,
            )
    raise LassoConvergenceError(
        f"KKT violation {violation:.3e} above {KKT_TOLERANCE:g} after "
        f"{MAX_GRADIENT_REFRESHES} gradient refreshes at λ={lam:.6g}",
        lam=float(lam),
        kkt_violation=violation,
    )


def lambda_grid(lam_max: float, grid_size: int, lambda_min_ratio: float) -> np.ndarray:
    """Log-spaced grid from lam_max down to lam_max * lambda_min_ratio."""
    if grid_size < 2:
        raise ValidationError(f"grid_size must be >= 2, got {grid_size}", field="grid_size")
    if not 0.0 < lambda_min_ratio < 1.0:
        raise ValidationError(
            f"lambda_min_ratio must lie in (0, 1), got {lambda_min_ratio}", field="lambda_min_ratio"
        )
    # a response orthogonal to every column has the zero solution at any λ
    top = lam_max if lam_max > 0.0 else 1.0
    return np.geomspace(top, top * lambda_min_ratio, grid_size)


def _path_on_system(system: GramSystem, lambdas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Warm-started solves down the grid; returns (working coefs m x L, KKT violations)."""
    m = system.corr.shape[0]
    coefs = np.zeros((m, len(lambdas)))
    violations = np.zeros(len(lambdas))
    coef = np.zeros(m)
    for i, lam in enumerate(lambdas):
        coef, violations[i] = _solve_system(system, float(lam), coef)
        coefs[:, i] = coef
    return coefs, violations


def path_from_cross_products(
    products: CrossProducts,
    grid_size: int = DEFAULT_GRID_SIZE,
    lambda_min_ratio: float = DEFAULT_LAMBDA_MIN_RATIO,
    standardize: bool = True,
    lambdas: Optional[np.ndarray] = None,
) -> LassoPath:
    """Lasso path from precomputed cross products."""
    system = products.system(standardize)
    lam_max = system.lambda_max
    if lambdas is None:
        lambdas = lambda_grid(lam_max, grid_size, lambda_min_ratio)
    working, violations = _path_on_system(system, lambdas)
    msr = np.clip(system.mean_square_residual(working), 0.0, None)
    return LassoPath(
        lambdas=np.asarray(lambdas, dtype=np.float64),
        coefficients=working / system.scale[:, None],
        ssr=msr * system.n,
        nonzero_counts=np.count_nonzero(working, axis=0),
        n_obs=system.n,
        lambda_max=lam_max,
        kkt_violations=violations,
    )


def solve(problem: LassoProblem, lam: float) -> np.ndarray:
    """
    Solve the lasso at a single λ.

    Args:
        problem: Design, response and standardization flag
        lam: Penalty λ >= 0 (objective uses 2λ||g||_1)

    Returns:
        Coefficients on the original scale
    """
    if lam < 0:
        raise ValidationError(f"λ must be nonnegative, got {lam}", field="lambda")
    system = CrossProducts.from_data(problem.design, problem.response).system(problem.standardize)
    coef, _ = _solve_system(system, float(lam), np.zeros(problem.m))
    return coef / system.scale


def path(
    problem: LassoProblem,
    grid_size: int = DEFAULT_GRID_SIZE,
    lambda_min_ratio: float = DEFAULT_LAMBDA_MIN_RATIO,
) -> LassoPath:
    """Regularization path from λ_max = max|Z'r|/n down to λ_max * lambda_min_ratio."""
    products = CrossProducts.from_data(problem.design, problem.response)
    return path_from_cross_products(products, grid_size, lambda_min_ratio, problem.standardize)


def gic_scores(lasso_path: LassoPath, p_ambient: int, n: int) -> np.ndarray:
    """GIC(λ) = SSR/n + q(λ) log(p-1) ln(ln n) / n along the path."""
    if n < 3:
        raise ValidationError(f"GIC needs n >= 3, got {n}", field="n")
    if p_ambient < 2:
        raise ValidationError(f"GIC needs p >= 2, got {p_ambient}", field="p_ambient")
    penalty = np.log(p_ambient - 1) * np.log(np.log(n)) / n
    return lasso_path.ssr / n + lasso_path.nonzero_counts * penalty


def select_gic(lasso_path: LassoPath, p_ambient: int, n: int) -> LassoSelection:
    """Grid point minimizing GIC; ties go to the larger λ."""
    scores = gic_scores(lasso_path, p_ambient, n)
    idx = int(np.argmin(scores))
    return LassoSelection(
        lam=float(lasso_path.lambdas[idx]),
        coefficients=lasso_path.coefficients[:, idx].copy(),
        score=float(scores[idx]),
        index=idx,
    )


def cv_test_folds(n: int, k: int, seed: int, blocked: bool = False) -> List[np.ndarray]:
    """
    Test-index sets of a k-fold partition of range(n).

    Seeded uniform random partition by default; contiguous time blocks
    when blocked is set.
    """
    if k < 2:
        raise ValidationError(f"cv folds must be >= 2, got {k}", field="cv_folds")
    if k > n:
        raise ValidationError(f"cv folds ({k}) exceed observations ({n})", field="cv_folds")
    if blocked:
        splitter = KFold(n_splits=k, shuffle=False)
    else:
        splitter = KFold(n_splits=k, shuffle=True, random_state=int(seed) % (2**32))
    return [test for _, test in splitter.split(np.zeros((n, 1)))]


def cv_scores_from_cross_products(
    full: CrossProducts,
    test_folds: Sequence[CrossProducts],
    lambdas: np.ndarray,
    standardize: bool = True,
) -> np.ndarray:
    """Mean out-of-fold mean squared error for every λ on the grid."""
    errors = np.zeros((len(test_folds), len(lambdas)))
    for f, test in enumerate(test_folds):
        train = full - test
        if train.n < 2 or test.n < 1:
            raise ValidationError(
                f"cv fold {f} leaves {train.n} training observations (need >= 2)", field="cv_folds"
            )
        system = train.system(standardize)
        working, _ = _path_on_system(system, lambdas)
        coefs = working / system.scale[:, None]
        fit = test.zr @ coefs
        quad = np.einsum("il,il->l", coefs, test.zz @ coefs)
        errors[f] = (test.rr - 2.0 * fit + quad) / test.n
    return errors.mean(axis=0)


def select_cv_from_cross_products(
    full: CrossProducts,
    test_folds: Sequence[CrossProducts],
    lambdas: np.ndarray,
    standardize: bool = True,
) -> LassoSelection:
    """CV-selected λ, refit on the full sample by warm starts down to it."""
    scores = cv_scores_from_cross_products(full, test_folds, lambdas, standardize)
    idx = int(np.argmin(scores))
    system = full.system(standardize)
    working, _ = _path_on_system(system, lambdas[: idx + 1])
    return LassoSelection(
        lam=float(lambdas[idx]),
        coefficients=working[:, -1] / system.scale,
        score=float(scores[idx]),
        index=idx,
    )


def select_cv(
    problem: LassoProblem,
    k: int,
    grid: Sequence[float],
    seed: int,
    blocked: bool = False,
) -> LassoSelection:
    """
    k-fold cross-validation over a λ grid.

    Args:
        problem: Lasso problem
        k: Number of folds (2 <= k <= n)
        grid: Candidate λ values (descending)
        seed: Fold-assignment seed
        blocked: Use contiguous time blocks instead of a random partition

    Returns:
        LassoSelection with the argmin-MSE λ and full-sample coefficients
    """
    lambdas = np.sort(np.asarray(grid, dtype=np.float64))[::-1]
    full = CrossProducts.from_data(problem.design, problem.response)
    folds = [
        CrossProducts.from_data(problem.design[idx], problem.response[idx])
        for idx in cv_test_folds(problem.n, k, seed, blocked)
    ]
    return select_cv_from_cross_products(full, folds, lambdas, problem.standardize)
