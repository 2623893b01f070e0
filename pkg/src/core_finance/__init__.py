# Core Finance Engine for nodewise-portfolio
# Factor model, nodewise precision estimation and portfolio engines.
# simulation and backtest depend on src.schemas and are imported directly.

from ..errors import (
    NodewiseError,
    UserInputError,
    NumericalError,
    ValidationError,
    ConfigError,
    PanelFormatError,
    InputFileNotFoundError,
    PanelAlignmentError,
    SingularMatrixError,
    LassoConvergenceError,
    DegenerateAssetError,
    DegenerateFrontierError,
    AmbiguousBranchError,
    NonPositiveFormError,
    ZeroVarianceError,
    BacktestError,
)
from .factor_model import FactorModelFit, fit_ols, sample_mean
from .lasso_path import LassoPath, LassoProblem, LassoSelection, path, select_cv, select_gic, solve
from .precision import (
    NodewisePrecision,
    NodewiseSettings,
    ReturnsPrecision,
    Selector,
    block_diag_cov,
    combine_smw,
    fit_nodewise,
    symmetrize,
    toeplitz_cov,
    toeplitz_precision_closed_form,
)
from .portfolio import AFD, PortfolioKind, PortfolioResult, SharpeEstimates, afd, sharpe_estimates

__all__ = [
    "NodewiseError",
    "UserInputError",
    "NumericalError",
    "ValidationError",
    "ConfigError",
    "PanelFormatError",
    "InputFileNotFoundError",
    "PanelAlignmentError",
    "SingularMatrixError",
    "LassoConvergenceError",
    "DegenerateAssetError",
    "DegenerateFrontierError",
    "AmbiguousBranchError",
    "NonPositiveFormError",
    "ZeroVarianceError",
    "BacktestError",
    "FactorModelFit",
    "fit_ols",
    "sample_mean",
    "LassoPath",
    "LassoProblem",
    "LassoSelection",
    "path",
    "select_cv",
    "select_gic",
    "solve",
    "NodewisePrecision",
    "NodewiseSettings",
    "ReturnsPrecision",
    "Selector",
    "block_diag_cov",
    "combine_smw",
    "fit_nodewise",
    "symmetrize",
    "toeplitz_cov",
    "toeplitz_precision_closed_form",
    "AFD",
    "PortfolioKind",
    "PortfolioResult",
    "SharpeEstimates",
    "afd",
    "sharpe_estimates",
]
