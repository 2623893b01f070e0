"""
Panel CSV parser for nodewise-portfolio.

Parses returns and factor CSV files into immutable panels.

Layout: header row `date,<id>,<id>,...`, one row per period, values are
excess returns (decimal per period). Panels store values assets-by-time
in column-major order so a single period's cross-section is contiguous.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import InputFileNotFoundError, PanelAlignmentError, PanelFormatError, ValidationError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _freeze(values: np.ndarray) -> np.ndarray:
    frozen = np.asfortranarray(np.asarray(values, dtype=np.float64))
    if frozen is values:
        frozen = frozen.copy(order="F")
    frozen.setflags(write=False)
    return frozen


def _strictly_increasing(keys: pd.Index) -> bool:
    return bool(keys.is_monotonic_increasing and keys.is_unique)


def _check_time_index(labels: Tuple[str, ...]) -> None:
    """Labels must increase as plain strings, as numbers or as dates."""
    if _strictly_increasing(pd.Index(list(labels))):
        return
    numeric = pd.to_numeric(pd.Series(labels, dtype=object), errors="coerce")
    if not numeric.isna().any() and _strictly_increasing(pd.Index(numeric)):
        return
    try:
        dates = pd.to_datetime(pd.Series(labels, dtype=object), format="mixed")
        if _strictly_increasing(pd.Index(dates)):
            return
    except (ValueError, TypeError, OverflowError):
        pass
    raise ValidationError("time_index must be strictly increasing", field="time_index")


def _check_ids(ids: Tuple[str, ...], field: str) -> None:
    seen = set()
    for name in ids:
        if name in seen:
            raise ValidationError(f"duplicate id '{name}' in {field}", field=field)
        seen.add(name)


@dataclass(frozen=True)
class ReturnsPanel:
    """Excess returns, p assets by n periods."""
    values: np.ndarray  # p x n
    asset_ids: Tuple[str, ...]
    time_index: Tuple[str, ...]

    def __post_init__(self):
        values = _freeze(self.values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "asset_ids", tuple(str(a) for a in self.asset_ids))
        object.__setattr__(self, "time_index", tuple(str(t) for t in self.time_index))

        if values.ndim != 2:
            raise ValidationError("returns must be a p x n matrix", field="values")
        p, n = values.shape
        if p < 2:
            raise ValidationError(f"returns panel needs at least 2 assets, got {p}", field="values")
        if n < 2:
            raise ValidationError(f"returns panel needs at least 2 observations, got {n}", field="values")
        if len(self.asset_ids) != p:
            raise ValidationError("asset_ids length does not match rows", field="asset_ids")
        if len(self.time_index) != n:
            raise ValidationError("time_index length does not match columns", field="time_index")
        if not np.all(np.isfinite(values)):
            raise ValidationError("returns contain non-finite entries", field="values")
        _check_ids(self.asset_ids, "asset_ids")
        _check_time_index(self.time_index)

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def select_periods(self, start: int, stop: int) -> "ReturnsPanel":
        """Return the sub-panel of periods [start, stop)."""
        return ReturnsPanel(self.values[:, start:stop], self.asset_ids, self.time_index[start:stop])

    def select_assets(self, indices: Sequence[int]) -> "ReturnsPanel":
        idx = list(indices)
        return ReturnsPanel(self.values[idx, :], [self.asset_ids[i] for i in idx], self.time_index)

    def to_frame(self) -> pd.DataFrame:
        """Periods as rows, assets as columns (the CSV orientation)."""
        frame = pd.DataFrame(self.values.T, index=list(self.time_index), columns=list(self.asset_ids))
        frame.index.name = "date"
        return frame


@dataclass(frozen=True)
class FactorPanel:
    """Observed factors, K factors by n periods."""
    values: np.ndarray  # K x n
    factor_ids: Tuple[str, ...]
    time_index: Tuple[str, ...]

    def __post_init__(self):
        values = _freeze(self.values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "factor_ids", tuple(str(f) for f in self.factor_ids))
        object.__setattr__(self, "time_index", tuple(str(t) for t in self.time_index))

        if values.ndim != 2:
            raise ValidationError("factors must be a K x n matrix", field="values")
        k, n = values.shape
        if k < 1:
            raise ValidationError("factor panel needs at least one factor", field="values")
        if n < 2:
            raise ValidationError(f"factor panel needs at least 2 observations, got {n}", field="values")
        if k >= n:
            raise ValidationError(f"need K < n, got K={k}, n={n}", field="values")
        if len(self.factor_ids) != k:
            raise ValidationError("factor_ids length does not match rows", field="factor_ids")
        if len(self.time_index) != n:
            raise ValidationError("time_index length does not match columns", field="time_index")
        if not np.all(np.isfinite(values)):
            raise ValidationError("factors contain non-finite entries", field="values")
        _check_ids(self.factor_ids, "factor_ids")
        _check_time_index(self.time_index)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def select_periods(self, start: int, stop: int) -> "FactorPanel":
        return FactorPanel(self.values[:, start:stop], self.factor_ids, self.time_index[start:stop])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values.T, index=list(self.time_index), columns=list(self.factor_ids))
        frame.index.name = "date"
        return frame


def _read_numeric_csv(path: PathLike) -> Tuple[List[str], List[str], np.ndarray]:
    """
    Read a `date,<id>,...` CSV into (ids, time labels, n x m values).

    Raises:
        InputFileNotFoundError: If the file does not exist
        PanelFormatError: On missing cells or non-numeric values, naming the
            data row (0-based) and column.
    """
    path = Path(path)
    if not path.is_file():
        raise InputFileNotFoundError(f"panel file not found: {path}", path=str(path))

    # header=None keeps duplicate ids intact (pandas would mangle them)
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise PanelFormatError(f"{path.name}: {exc}") from exc
    if raw.shape[0] < 1 or raw.shape[1] < 2:
        raise PanelFormatError(f"{path.name}: expected a header `date,<id>,...` and data rows")

    header = [str(h).strip() for h in raw.iloc[0].tolist()]
    ids = header[1:]
    body = raw.iloc[1:].reset_index(drop=True)
    labels = [v.strip() if isinstance(v, str) else "" for v in body.iloc[:, 0].tolist()]

    values = np.empty((body.shape[0], len(ids)), dtype=np.float64)
    for col_pos, name in enumerate(ids, start=1):
        cells = body.iloc[:, col_pos].tolist()
        for row, cell in enumerate(cells):
            text = cell.strip() if isinstance(cell, str) else ""
            if text == "":
                raise PanelFormatError(
                    f"{path.name}: missing value at row {row}, column '{name}'", row=row, column=name
                )
            try:
                number = float(text)
            except ValueError:
                raise PanelFormatError(
                    f"{path.name}: cannot parse '{text}' at row {row}, column '{name}'",
                    row=row,
                    column=name,
                ) from None
            if not np.isfinite(number):
                raise PanelFormatError(
                    f"{path.name}: non-finite value at row {row}, column '{name}'", row=row, column=name
                )
            values[row, col_pos - 1] = number

    for row, label in enumerate(labels):
        if label == "":
            raise PanelFormatError(f"{path.name}: missing time label at row {row}", row=row, column=header[0])

    return ids, labels, values


def load_returns_csv(path: PathLike) -> ReturnsPanel:
    """
    Load a returns CSV into a ReturnsPanel (assets as rows).

    Args:
        path: CSV file with header `date,<asset>,<asset>,...`

    Returns:
        ReturnsPanel with values of shape p x n
    """
    ids, labels, values = _read_numeric_csv(path)
    if len(labels) < 2:
        raise ValidationError(f"{Path(path).name}: need at least 2 observations, got {len(labels)}", field="values")
    panel = ReturnsPanel(values.T, ids, labels)
    logger.info(f"Loaded returns panel {Path(path).name}: p={panel.p}, n={panel.n}")
    return panel


def check_alignment(returns: ReturnsPanel, factors: FactorPanel) -> None:
    """Raise PanelAlignmentError unless both panels share the exact time index."""
    if returns.time_index == factors.time_index:
        return
    for pos, (a, b) in enumerate(zip(returns.time_index, factors.time_index)):
        if a != b:
            raise PanelAlignmentError(
                f"time index mismatch at position {pos}: returns '{a}' vs factors '{b}'", first_mismatch=pos
            )
    pos = min(returns.n, factors.n)
    raise PanelAlignmentError(
        f"time index lengths differ (returns n={returns.n}, factors n={factors.n}); first unmatched position {pos}",
        first_mismatch=pos,
    )


def load_factors_csv(path: PathLike, returns: Optional[ReturnsPanel] = None) -> FactorPanel:
    """
    Load a factor CSV into a FactorPanel.

    Args:
        path: CSV file with header `date,<factor>,...`
        returns: When given, the factor time index must match it exactly

    Returns:
        FactorPanel with factor_ids in column order
    """
    ids, labels, values = _read_numeric_csv(path)
    if len(labels) < 2:
        raise ValidationError(f"{Path(path).name}: need at least 2 observations, got {len(labels)}", field="values")
    panel = FactorPanel(values.T, ids, labels)
    if returns is not None:
        check_alignment(returns, panel)
    logger.info(f"Loaded factor panel {Path(path).name}: K={panel.k}, n={panel.n}")
    return panel


def align(returns: ReturnsPanel, factors: FactorPanel) -> Tuple[ReturnsPanel, FactorPanel]:
    """
    Restrict both panels to their common time labels, keeping returns order.

    Raises:
        PanelAlignmentError: If the panels share no time label
    """
    if returns.time_index == factors.time_index:
        return returns, factors

    factor_pos = {label: i for i, label in enumerate(factors.time_index)}
    keep_r = [i for i, label in enumerate(returns.time_index) if label in factor_pos]
    if not keep_r:
        raise PanelAlignmentError("returns and factors share no time labels")
    keep_f = [factor_pos[returns.time_index[i]] for i in keep_r]

    dropped = returns.n - len(keep_r) + factors.n - len(keep_f)
    logger.info(f"Aligned panels on {len(keep_r)} common periods ({dropped} dropped)")

    aligned_r = ReturnsPanel(
        returns.values[:, keep_r], returns.asset_ids, [returns.time_index[i] for i in keep_r]
    )
    aligned_f = FactorPanel(
        factors.values[:, keep_f], factors.factor_ids, [factors.time_index[i] for i in keep_f]
    )
    return aligned_r, aligned_f


def write_panel_csv(panel: Union[ReturnsPanel, FactorPanel], path: PathLike) -> Path:
    """Write a panel in the ingestion layout at 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    panel.to_frame().to_csv(path, float_format="%.17g", lineterminator="\n")
    return path


def write_matrix_csv(matrix: np.ndarray, ids: Sequence[str], path: PathLike) -> Path:
    """Dense square matrix with ids as header and first column, 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(np.asarray(matrix), index=list(ids), columns=list(ids))
    frame.index.name = "asset"
    frame.to_csv(path, float_format="%.17g", lineterminator="\n")
    return path


def load_matrix_csv(path: PathLike) -> Tuple[List[str], np.ndarray]:
    """
    Read a dense square matrix written by write_matrix_csv.

    Returns:
        (ids, matrix)
    """
    ids, row_ids, values = _read_numeric_csv(path)
    if values.shape[0] != values.shape[1]:
        raise PanelFormatError(f"{Path(path).name}: matrix is not square ({values.shape[0]}x{values.shape[1]})")
    if row_ids != ids:
        raise PanelFormatError(f"{Path(path).name}: row ids do not match column ids")
    return ids, values
