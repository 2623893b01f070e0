"""
nodewise-portfolio command-line entry point.

Commands:
- simulate: Monte-Carlo study of Sharpe-ratio estimation error
- backtest: rolling-window out-of-sample evaluation
- precision: Ω̂, Ω̂_sym and Γ̂ for a returns/factors panel
- weights: portfolio weights and Sharpe-ratio estimates for a panel
- schema: print the settings JSON schema

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.

Usage:
    python app.py simulate --config sim.cfg --out results/ --seed 7
    python app.py backtest --returns returns.csv --factors factors.csv --tc 0
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pydantic

from ..core_finance.backtest import run_backtest_suite
from ..core_finance.factor_model import fit_ols
from ..core_finance.portfolio import PortfolioKind, build_portfolio, sharpe_estimates
from ..core_finance.precision import ReturnsPrecision, Selector, estimate_returns_precision
from ..core_finance.simulation import run_simulation_grid
from ..errors import ConfigError, NodewiseError, NumericalError, UserInputError
from ..parsers.panel_csv import FactorPanel, ReturnsPanel, load_factors_csv, load_returns_csv
from ..schemas.manifest import Command, RunManifest
from . import report_writer
from .config import Settings, load_settings

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_USER_ERROR = 2
EXIT_NUMERICAL_ERROR = 3

# argparse destination -> Settings field
_FLAG_FIELDS = {
    "out": "output_dir",
    "seed": "seed",
    "threads": "threads",
    "selector": "selector",
    "cv_folds": "cv_folds",
    "cv_blocked": "cv_blocked",
    "tc": "transaction_cost",
    "window": "window",
    "rho1": "rho1",
    "sigma": "sigma",
    "delta": "delta",
    "strategy": "strategy",
    "returns": "returns_path",
    "factors": "factors_path",
    "log_level": "log_level",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key=value settings file")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker threads (default: CPU count)")
    common.add_argument("--selector", choices=[s.value for s in Selector])
    common.add_argument("--cv-folds", type=int)
    common.add_argument("--cv-blocked", action="store_true", default=None, help="contiguous CV folds")
    common.add_argument("--tc", type=float, help="proportional transaction cost, e.g. 0.005")
    common.add_argument("--window", type=int, help="in-sample window length")
    common.add_argument("--rho1", type=float, help="Markowitz target mean")
    common.add_argument("--sigma", type=float, help="risk bound of the max out-of-sample portfolio")
    common.add_argument("--delta", type=float, help="scale of the negative-branch MSR portfolio")
    common.add_argument("--strategy", choices=[k.value for k in PortfolioKind])
    common.add_argument("--returns", type=Path, help="returns CSV")
    common.add_argument("--factors", type=Path, help="factors CSV")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(
        prog="nodewise-portfolio",
        description="Nodewise-regression precision matrices for factor models and portfolio evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="Monte-Carlo Sharpe-ratio estimation study")
    sub.add_parser("backtest", parents=[common], help="rolling-window out-of-sample backtest")
    sub.add_parser("precision", parents=[common], help="estimate and write Ω̂, Ω̂_sym and Γ̂")
    sub.add_parser("weights", parents=[common], help="portfolio weights and Sharpe-ratio estimates")
    sub.add_parser("schema", help="print the settings JSON schema")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    return {field: getattr(args, dest, None) for dest, field in _FLAG_FIELDS.items()}


def _load_panels(settings: Settings) -> Tuple[ReturnsPanel, FactorPanel]:
    if settings.returns_path is None or settings.factors_path is None:
        raise ConfigError("returns_path and factors_path are required (--returns / --factors)")
    returns = load_returns_csv(settings.returns_path)
    factors = load_factors_csv(settings.factors_path, returns)
    return returns, factors


def _estimate(settings: Settings, returns: ReturnsPanel, factors: FactorPanel) -> ReturnsPrecision:
    fit = fit_ols(returns, factors)
    return estimate_returns_precision(fit, settings.backtest_config().nodewise_settings(settings.threads))


def cmd_simulate(manifest: RunManifest, settings: Settings) -> int:
    configs = settings.sim_configs()
    reports = run_simulation_grid(configs)
    report_writer.write_simulation_reports(reports, manifest.output_dir)
    if any(report.failure_count == len(report.records) for report in reports):
        logger.error("Every replication failed for at least one design point")
        return EXIT_NUMERICAL_ERROR
    return EXIT_OK


def cmd_backtest(manifest: RunManifest, settings: Settings) -> int:
    returns, factors = _load_panels(settings)
    suite = run_backtest_suite(returns, factors, settings.backtest_config())
    report_writer.write_backtest_reports(suite, manifest.output_dir)
    return EXIT_OK


def cmd_precision(manifest: RunManifest, settings: Settings) -> int:
    returns, factors = _load_panels(settings)
    precision = _estimate(settings, returns, factors)
    report_writer.write_precision_reports(precision, manifest.output_dir)
    return EXIT_OK


def cmd_weights(manifest: RunManifest, settings: Settings) -> int:
    """
    Weights for the configured strategy on the full panel.

    The out-of-sample Sharpe estimate uses the (1/n) sample covariance as
    the evaluation covariance and μ̂ on both sides.
    """
    returns, factors = _load_panels(settings)
    precision = _estimate(settings, returns, factors)
    mu_hat = precision.fit.sample_mean
    result = build_portfolio(
        settings.strategy, precision.gamma, mu_hat, settings.rho1, settings.sigma, settings.delta
    )
    sigma_eval = np.cov(returns.values, bias=True)
    estimates = sharpe_estimates(precision.gamma, mu_hat, settings.rho1, sigma_eval)
    report_writer.write_weights_reports(result, returns.asset_ids, estimates, manifest.output_dir)

    print(f"strategy: {result.kind.value}")
    print(f"weight sum: {result.weight_sum:.6f}")
    print(f"gross leverage: {result.gross_leverage:.6f}")
    if result.kind == PortfolioKind.MARKOWITZ:
        print(f"w'mu_hat = {float(result.weights @ mu_hat):.6f} (rho1 = {settings.rho1:.6f})")
    if result.kind == PortfolioKind.CONSTRAINED_MSR:
        print(f"MSR branch: {result.params['branch']:+d}")
    return EXIT_OK


COMMANDS: Dict[Command, Callable[[RunManifest, Settings], int]] = {
    Command.SIMULATE: cmd_simulate,
    Command.BACKTEST: cmd_backtest,
    Command.PRECISION: cmd_precision,
    Command.WEIGHTS: cmd_weights,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)

    if args.command == "schema":
        print(json.dumps(Settings.model_json_schema(), indent=2, sort_keys=True))
        return EXIT_OK

    try:
        settings = load_settings(args.config, _overrides(args))
        manifest = RunManifest(
            command=Command(args.command),
            config_path=args.config,
            output_dir=settings.output_dir,
            seed=settings.seed,
            log_level=settings.log_level,
        )
        logging.getLogger().setLevel(manifest.log_level)
        logger.info(f"Running {manifest.command.value} (seed={manifest.seed}, out={manifest.output_dir})")
        return COMMANDS[manifest.command](manifest, settings)
    except UserInputError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return EXIT_USER_ERROR
    except pydantic.ValidationError as exc:
        logger.error(f"Invalid input: {exc}")
        return EXIT_USER_ERROR
    except NumericalError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return EXIT_NUMERICAL_ERROR
    except NodewiseError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
