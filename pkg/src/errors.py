"""
Error hierarchy for nodewise-portfolio.

Two families, mapped to CLI exit codes:
- UserInputError (exit 2): bad files, bad configuration, bad parameters
- NumericalError (exit 3): singular systems, non-convergence, degenerate inputs
"""

from typing import Optional


class NodewiseError(Exception):
    """Base exception for all library errors."""

    exit_code = 1


class UserInputError(NodewiseError):
    """Invalid user-supplied data or configuration."""

    exit_code = 2


class ValidationError(UserInputError):
    """Raised when a parameter fails validation."""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(message)


class ConfigError(UserInputError):
    """Raised when the configuration file or settings cannot be parsed."""


class PanelFormatError(UserInputError):
    """Raised when a panel CSV cannot be parsed; carries the cell location."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        super().__init__(message)


class InputFileNotFoundError(UserInputError, FileNotFoundError):
    """Raised when an input file (panel, matrix or config) does not exist."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(message)


class PanelAlignmentError(UserInputError):
    """Raised when returns and factors disagree on their time index."""

    def __init__(self, message: str, first_mismatch: Optional[int] = None):
        self.first_mismatch = first_mismatch
        super().__init__(message)


class NumericalError(NodewiseError):
    """A numerical routine could not produce a valid result."""

    exit_code = 3


class SingularMatrixError(NumericalError):
    """Raised when a required inversion is singular or ill-conditioned."""

    def __init__(self, message: str, which: str, condition: float = float("inf")):
        self.which = which
        self.condition = condition
        super().__init__(message)


class LassoConvergenceError(NumericalError):
    """Raised when coordinate descent exhausts its sweep budget."""

    def __init__(self, message: str, lam: float, kkt_violation: float):
        self.lam = lam
        self.kkt_violation = kkt_violation
        super().__init__(message)


class DegenerateAssetError(NumericalError):
    """Raised when an asset's residual is perfectly explained by the others."""

    def __init__(self, message: str, asset: str):
        self.asset = asset
        super().__init__(message)


class DegenerateFrontierError(NumericalError):
    """AD - F^2 vanishes and the target mean is not attainable."""


class AmbiguousBranchError(NumericalError):
    """1'Γμ is numerically zero, so the constrained MSR branch is undefined."""


class NonPositiveFormError(NumericalError):
    """A quadratic form that must be positive is not."""


class ZeroVarianceError(NumericalError):
    """A return series has zero sample variance."""


class BacktestError(NumericalError):
    """Too many rolling windows failed."""
