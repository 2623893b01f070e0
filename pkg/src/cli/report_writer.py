"""
Report writers for the command-line tool.

CSV files carry every float at 17 significant digits and never contain
timings, so reruns with the same configuration are byte-identical.
Human-readable summaries use 3 decimals.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..core_finance.backtest import BacktestSuite
from ..core_finance.portfolio import PortfolioResult, SharpeEstimates
from ..core_finance.precision import ReturnsPrecision
from ..core_finance.simulation import SimReport, summary_table
from ..parsers.panel_csv import write_matrix_csv
from ..utils import format_table_value

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {path}")
    return path


def write_json(payload: Dict[str, object], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def _replication_rows(report: SimReport) -> List[Dict[str, object]]:
    rows = []
    for record in report.records:
        base = {
            "design": report.config.design_label(),
            "n": report.config.n,
            "p_rule": report.config.p_rule.value,
            "p": report.p,
            "replication": record.index,
            "seed": record.seed,
            "ok": record.ok,
            "message": record.message,
            "precision_error": record.precision_error,
            "oracle_precision_error": record.oracle_precision_error,
        }
        if not record.errors:
            rows.append({**base, "estimator": "", "category": "", "abs_error": np.nan, "ratio_error": np.nan})
            continue
        for (estimator, category), abs_error in record.errors.items():
            rows.append(
                {
                    **base,
                    "estimator": estimator,
                    "category": category,
                    "abs_error": abs_error,
                    "ratio_error": record.ratio_errors[(estimator, category)],
                }
            )
    return rows


def write_simulation_reports(reports: Sequence[SimReport], out_dir: Path) -> List[Path]:
    """
    simulation_report.csv, replications.csv and summary.txt.

    The summary pivots mean absolute errors per estimator and is the only
    file that mentions runtimes.
    """
    rows = [row for report in reports for row in report.rows()]
    paths = [
        write_csv(pd.DataFrame(rows), out_dir / "simulation_report.csv"),
        write_csv(
            pd.DataFrame([row for report in reports for row in _replication_rows(report)]),
            out_dir / "replications.csv",
        ),
    ]

    estimators = list(dict.fromkeys(row["estimator"] for row in rows))
    lines = ["Mean |SR^2 estimate - SR^2| by design (rows) and n / p-rule / category (columns)", ""]
    for estimator in estimators:
        table = summary_table(reports, estimator)
        lines.append(f"[{estimator}]")
        lines.append(table.to_string(float_format=format_table_value) if not table.empty else "(no data)")
        lines.append("")
    for report in reports:
        lines.append(
            f"n={report.config.n} p={report.p} {report.config.design_label()}: "
            f"{report.failure_count} failed of {len(report.records)} replications, "
            f"runtime {report.runtime_seconds:.1f}s"
        )
    summary_path = out_dir / "summary.txt"
    summary_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths.append(summary_path)
    return paths


def write_backtest_reports(suite: BacktestSuite, out_dir: Path) -> List[Path]:
    """One per-period CSV per strategy plus backtest_summary.csv."""
    paths = [
        write_csv(result.period_frame(), out_dir / f"backtest_{name}.csv")
        for name, result in suite.results.items()
    ]
    paths.append(write_csv(suite.summary_frame(), out_dir / "backtest_summary.csv"))
    return paths


def precision_diagnostics(precision: ReturnsPrecision) -> Dict[str, object]:
    """Selected λ_j, τ̂_j² and the condition numbers of the pipeline."""
    nodewise = precision.nodewise
    diagnostics: Dict[str, object] = {
        "selector": nodewise.selector.value,
        "p": int(nodewise.omega.shape[0]),
        "lambda": {asset: float(lam) for asset, lam in zip(nodewise.asset_ids, nodewise.lambdas)},
        "tau_sq": {asset: float(tau) for asset, tau in zip(nodewise.asset_ids, nodewise.tau_sq)},
        "factor_cov_condition": precision.factor_cov_condition,
        "bracket_condition": precision.bracket_condition,
    }
    if precision.fit is not None:
        diagnostics["n"] = precision.fit.n
        diagnostics["k"] = precision.fit.k
        diagnostics["factor_gram_condition"] = precision.fit.gram_condition
    return diagnostics


def write_precision_reports(precision: ReturnsPrecision, out_dir: Path) -> List[Path]:
    """omega.csv, omega_sym.csv, gamma.csv and diagnostics.json."""
    ids = precision.nodewise.asset_ids
    return [
        write_matrix_csv(precision.nodewise.omega, ids, out_dir / "omega.csv"),
        write_matrix_csv(precision.nodewise.omega_sym, ids, out_dir / "omega_sym.csv"),
        write_matrix_csv(precision.gamma, ids, out_dir / "gamma.csv"),
        write_json(precision_diagnostics(precision), out_dir / "diagnostics.json"),
    ]


def write_weights_reports(
    result: PortfolioResult,
    asset_ids: Sequence[str],
    estimates: Optional[SharpeEstimates],
    out_dir: Path,
) -> List[Path]:
    """weights.csv plus sharpe_estimates.csv when estimates are available."""
    paths = [
        write_csv(pd.DataFrame({"asset": list(asset_ids), "weight": result.weights}), out_dir / "weights.csv")
    ]
    if estimates is not None:
        frame = pd.DataFrame(
            {
                "quantity": ["gmv_sr", "mmv_sr", "msr", "msr_c", "msr_star", "sr_mos", "branch_indicator"],
                "value": [
                    estimates.gmv_sr,
                    estimates.mmv_sr,
                    estimates.msr,
                    estimates.msr_c,
                    estimates.msr_star,
                    estimates.sr_mos,
                    float(estimates.branch_indicator),
                ],
            }
        )
        paths.append(write_csv(frame, out_dir / "sharpe_estimates.csv"))
    return paths
