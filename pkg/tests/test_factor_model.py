import numpy as np
import pytest

from src.core_finance.factor_model import factor_covariance, fit_ols, fit_ols_arrays, sample_mean
from src.errors import PanelAlignmentError, SingularMatrixError
from src.parsers.panel_csv import FactorPanel, ReturnsPanel


def test_exact_linear_data():
    f = np.array([[0.01, -0.02, 0.03, 0.015, -0.005]])
    y = np.vstack([2.0 * f[0], -1.0 * f[0]])
    fit = fit_ols_arrays(y, f)
    np.testing.assert_allclose(fit.loadings[:, 0], [2.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(fit.residuals, 0.0, atol=1e-15)


def test_zero_factor_is_singular():
    with pytest.raises(SingularMatrixError) as info:
        fit_ols_arrays(np.ones((2, 3)), np.zeros((1, 3)), factor_ids=("MKT",))
    assert info.value.which == "factor_gram"
    assert "MKT" in str(info.value)


def test_constant_factor_without_intercept():
    y = np.array([[1.0, 2.0, 3.0], [0.0, 0.5, 1.0]])
    fit = fit_ols_arrays(y, np.full((1, 3), 2.0))
    np.testing.assert_allclose(fit.loadings[:, 0], y.mean(axis=1) / 2.0)
    np.testing.assert_allclose(fit.residuals, y - y.mean(axis=1, keepdims=True), atol=1e-14)


def test_collinear_factors_are_singular(rng):
    f = rng.standard_normal((1, 40))
    x = np.vstack([f, 3.0 * f])
    with pytest.raises(SingularMatrixError):
        fit_ols_arrays(rng.standard_normal((3, 40)), x)


def test_matches_normal_equations(rng):
    x = rng.standard_normal((2, 50))
    y = rng.standard_normal((5, 50))
    fit = fit_ols_arrays(y, x)
    oracle = np.linalg.solve(x @ x.T, x @ y.T).T
    np.testing.assert_allclose(fit.loadings, oracle, atol=1e-10)


def test_residuals_orthogonal_to_factors(panels):
    returns, factors = panels
    fit = fit_ols(returns, factors)
    cross = fit.residuals @ factors.values.T
    scale = np.abs(returns.values).max() * np.abs(factors.values).max()
    assert np.max(np.abs(cross)) / (fit.n * scale) <= 1e-10


def test_refit_on_residuals_gives_zero_loadings(panels):
    returns, factors = panels
    fit = fit_ols(returns, factors)
    refit = fit_ols_arrays(fit.residuals, factors.values)
    np.testing.assert_allclose(refit.loadings, 0.0, atol=1e-12)


def test_factor_covariance_two_pass(rng):
    x = rng.standard_normal((3, 80)) * 0.04 + 0.01
    centered = x - x.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(factor_covariance(x), centered @ centered.T / 80, atol=1e-12)
    np.testing.assert_array_equal(factor_covariance(x), factor_covariance(x).T)


def test_fit_requires_alignment():
    returns = ReturnsPanel(np.ones((2, 4)), ["a", "b"], ["1", "2", "3", "4"])
    factors = FactorPanel(np.array([[1.0, 2.0, 3.0, 5.0]]), ["MKT"], ["1", "2", "3", "5"])
    with pytest.raises(PanelAlignmentError):
        fit_ols(returns, factors)


@pytest.mark.parametrize(
    "values, expected",
    [
        ([[0.01, 0.01, 0.01], [0.01, 0.01, 0.01]], [0.01, 0.01]),
        ([[0.5, -0.5], [1.0, 2.0]], [0.0, 1.5]),
        ([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]], [2.0, 2.0]),
    ],
)
def test_sample_mean(values, expected):
    values = np.asarray(values)
    panel = ReturnsPanel(values, ["a", "b"], [str(i) for i in range(values.shape[1])])
    np.testing.assert_allclose(sample_mean(panel), expected)
