# Panel CSV parsers
from .panel_csv import (
    FactorPanel,
    ReturnsPanel,
    align,
    check_alignment,
    load_factors_csv,
    load_matrix_csv,
    load_returns_csv,
    write_matrix_csv,
    write_panel_csv,
)

__all__ = [
    "FactorPanel",
    "ReturnsPanel",
    "align",
    "check_alignment",
    "load_factors_csv",
    "load_matrix_csv",
    "load_returns_csv",
    "write_matrix_csv",
    "write_panel_csv",
]
