"""Shared fixtures for the nodewise-portfolio test suite."""
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.parsers.panel_csv import FactorPanel, ReturnsPanel


def random_spd(rng: np.random.Generator, p: int, ridge: float = 0.5) -> np.ndarray:
    """A well-conditioned random SPD matrix."""
    a = rng.standard_normal((p, p))
    return a @ a.T / p + ridge * np.eye(p)


def make_panels(rng: np.random.Generator, p: int = 6, n: int = 60, k: int = 2):
    """Returns and factors from a small factor model with Toeplitz(0.5) errors."""
    factors = rng.normal(0.005, 0.04, size=(k, n))
    loadings = rng.uniform(0.5, 1.5, size=(p, k))
    cov = 0.5 ** np.abs(np.subtract.outer(np.arange(p), np.arange(p))) * 1e-3
    errors = rng.multivariate_normal(np.zeros(p), cov, size=n).T
    returns = 0.002 + loadings @ factors + errors
    labels = [f"t{t + 1:04d}" for t in range(n)]
    return (
        ReturnsPanel(returns, [f"A{j + 1}" for j in range(p)], labels),
        FactorPanel(factors, [f"F{i + 1}" for i in range(k)], labels),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def panels(rng):
    return make_panels(rng)


@pytest.fixture
def panel_files(tmp_path, panels):
    """The panels fixture written as returns.csv / factors.csv."""
    returns, factors = panels
    returns_path = tmp_path / "returns.csv"
    factors_path = tmp_path / "factors.csv"
    returns.to_frame().to_csv(returns_path, float_format="%.17g")
    factors.to_frame().to_csv(factors_path, float_format="%.17g")
    return returns_path, factors_path


def write_csv(path: Path, header, rows) -> Path:
    pd.DataFrame(rows, columns=header).to_csv(path, index=False)
    return path
