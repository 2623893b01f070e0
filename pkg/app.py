"""
nodewise-portfolio
==================
Nodewise-regression precision matrices for observed-factor models,
portfolio weights, Sharpe-ratio estimates, Monte-Carlo studies and
rolling-window backtests.

Usage:
    python app.py simulate --config sim.cfg --out results/
    python app.py backtest --returns returns.csv --factors factors.csv
    python app.py precision --returns returns.csv --factors factors.csv
    python app.py weights --returns returns.csv --factors factors.csv --strategy markowitz
"""

import sys

from src.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
