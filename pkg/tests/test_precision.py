import numpy as np
import pytest

from src.core_finance.factor_model import fit_ols
from src.core_finance.precision import (
    NodewiseSettings,
    Selector,
    block_diag_cov,
    combine_smw,
    estimate_returns_precision,
    fit_nodewise,
    nodewise_from_residuals,
    symmetrize,
    toeplitz_cov,
    toeplitz_precision_closed_form,
    woodbury_precision,
)
from src.errors import DegenerateAssetError, SingularMatrixError, ValidationError

from conftest import random_spd


def _bivariate_residuals():
    """Four observations with sample moments exactly [[1, .5], [.5, 1]]."""
    u1 = np.array([1.0, -1.0, 1.0, -1.0])
    v = np.array([1.0, 1.0, -1.0, -1.0])
    u2 = 0.5 * u1 + np.sqrt(0.75) * v
    return np.vstack([u1, u2])


def test_bivariate_fixture():
    settings = NodewiseSettings(selector=Selector.GIC, lambda_min_ratio=1e-10)
    nodewise = nodewise_from_residuals(_bivariate_residuals(), settings)
    assert nodewise.gammas[0, 0] == pytest.approx(0.5, abs=1e-6)
    assert nodewise.tau_sq[0] == pytest.approx(0.75, abs=1e-6)
    np.testing.assert_allclose(nodewise.omega[0], [4.0 / 3.0, -2.0 / 3.0], atol=1e-6)
    np.testing.assert_allclose(nodewise.omega[1], [-2.0 / 3.0, 4.0 / 3.0], atol=1e-6)


def test_diagonal_residuals_give_diagonal_omega():
    # orthogonal rows: every off-diagonal correlation is zero, so λ_max = 0
    residuals = np.array(
        [
            [1.0, -1.0, 1.0, -1.0],
            [2.0, 2.0, -2.0, -2.0],
            [0.5, -0.5, -0.5, 0.5],
        ]
    )
    nodewise = nodewise_from_residuals(residuals, NodewiseSettings())
    np.testing.assert_array_equal(nodewise.gammas, 0.0)
    np.testing.assert_allclose(nodewise.tau_sq, [1.0, 4.0, 0.25])
    np.testing.assert_allclose(nodewise.omega, np.diag([1.0, 0.25, 4.0]))


def test_row_structure(rng):
    residuals = rng.multivariate_normal(np.zeros(5), toeplitz_cov(0.5, 5), size=120).T
    nodewise = nodewise_from_residuals(residuals, NodewiseSettings(grid_size=30))
    for j in range(5):
        others = np.delete(np.arange(5), j)
        assert nodewise.omega[j, j] == pytest.approx(1.0 / nodewise.tau_sq[j])
        np.testing.assert_allclose(nodewise.omega[j, others], -nodewise.gammas[j] / nodewise.tau_sq[j])
    assert np.all(nodewise.tau_sq > 0)
    assert np.array_equal(nodewise.omega_sym, nodewise.omega_sym.T)


def test_tau_bounds_residual_norm(rng):
    residuals = rng.multivariate_normal(np.zeros(6), toeplitz_cov(0.6, 6), size=80).T
    nodewise = nodewise_from_residuals(residuals, NodewiseSettings(grid_size=30))
    n = residuals.shape[1]
    for j in range(6):
        others = np.delete(np.arange(6), j)
        resid = residuals[j] - nodewise.gammas[j] @ residuals[others]
        assert nodewise.tau_sq[j] >= resid @ resid / n - 1e-9


def test_degenerate_asset():
    a = np.array([1.0, -1.0, 2.0, 0.5])
    residuals = np.vstack([a, 2.0 * a])
    settings = NodewiseSettings(lambda_min_ratio=1e-200)
    with pytest.raises(DegenerateAssetError) as info:
        nodewise_from_residuals(residuals, settings, ["a", "b"])
    assert info.value.asset == "a"


def test_nodewise_needs_two_assets():
    with pytest.raises(ValidationError):
        nodewise_from_residuals(np.ones((1, 10)), NodewiseSettings())


def test_permutation_equivariance(rng):
    residuals = rng.multivariate_normal(np.zeros(5), toeplitz_cov(0.5, 5), size=100).T
    ids = ["a", "b", "c", "d", "e"]
    perm = np.array([3, 0, 4, 2, 1])
    for selector in (Selector.GIC, Selector.CV):
        settings = NodewiseSettings(selector=selector, cv_folds=5, seed=9, grid_size=25)
        base = nodewise_from_residuals(residuals, settings, ids)
        permuted = nodewise_from_residuals(residuals[perm], settings, [ids[i] for i in perm])
        np.testing.assert_allclose(permuted.omega, base.omega[np.ix_(perm, perm)], atol=1e-6)


def test_thread_count_does_not_change_result(rng):
    residuals = rng.multivariate_normal(np.zeros(6), toeplitz_cov(0.5, 6), size=90).T
    single = nodewise_from_residuals(residuals, NodewiseSettings(selector=Selector.CV, cv_folds=5, threads=1))
    multi = nodewise_from_residuals(residuals, NodewiseSettings(selector=Selector.CV, cv_folds=5, threads=4))
    assert np.array_equal(single.omega, multi.omega)


def test_cv_beats_inverse_sample_covariance():
    omega_true = toeplitz_precision_closed_form(0.5, 6)
    nodewise_err, naive_err = [], []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        residuals = rng.multivariate_normal(np.zeros(6), toeplitz_cov(0.5, 6), size=400).T
        settings = NodewiseSettings(selector=Selector.CV, cv_folds=5, seed=seed, grid_size=30)
        nodewise = nodewise_from_residuals(residuals, settings)
        naive = np.linalg.inv(np.cov(residuals, bias=True))
        nodewise_err.append(np.max(np.abs(nodewise.omega_sym - omega_true)))
        naive_err.append(np.max(np.abs(naive - omega_true)))
    assert np.mean(nodewise_err) < np.mean(naive_err)


def test_fit_nodewise_uses_factor_residuals(panels):
    returns, factors = panels
    fit = fit_ols(returns, factors)
    nodewise = fit_nodewise(fit, Selector.GIC, grid_size=20)
    assert nodewise.asset_ids == returns.asset_ids
    assert nodewise.omega.shape == (returns.p, returns.p)


@pytest.mark.parametrize(
    "omega, expected",
    [
        (np.array([[1.0, 2.0], [0.0, 1.0]]), np.array([[1.0, 1.0], [1.0, 1.0]])),
        (np.array([[1.0, 0.3], [-0.3, 1.0]]), np.eye(2)),
        (np.array([[2.0, 0.5], [0.5, 3.0]]), np.array([[2.0, 0.5], [0.5, 3.0]])),
    ],
)
def test_symmetrize(omega, expected):
    np.testing.assert_array_equal(symmetrize(omega), expected)


def test_smw_zero_loadings_returns_omega(rng):
    omega = random_spd(rng, 4)
    omega[0, 1] += 0.1  # non-symmetric on purpose
    gamma, _, _, _ = woodbury_precision(omega, symmetrize(omega), np.zeros((4, 2)), np.eye(2) * 0.002)
    np.testing.assert_array_equal(gamma, omega)


def test_smw_identity_on_random_instances():
    rng = np.random.default_rng(1)
    for _ in range(200):
        p = int(rng.integers(2, 51))
        k = int(rng.integers(1, 6))
        sigma_n = random_spd(rng, p)
        factor_cov = random_spd(rng, k, ridge=0.2)
        loadings = rng.standard_normal((p, k))
        sigma_y = loadings @ factor_cov @ loadings.T + sigma_n
        omega = np.linalg.inv(sigma_n)
        gamma, k_core, _, _ = woodbury_precision(omega, symmetrize(omega), loadings, factor_cov)
        np.testing.assert_allclose(gamma, np.linalg.inv(sigma_y), atol=1e-8)
        assert np.array_equal(k_core, k_core.T)


def test_smw_single_factor_hand_case():
    p = 4
    gamma, _, _, _ = woodbury_precision(np.eye(p), np.eye(p), np.ones((p, 1)), np.ones((1, 1)))
    np.testing.assert_allclose(gamma, np.eye(p) - np.ones((p, p)) / (1 + p), atol=1e-14)


def test_smw_singular_factor_cov():
    with pytest.raises(SingularMatrixError) as info:
        woodbury_precision(np.eye(3), np.eye(3), np.ones((3, 2)), np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert info.value.which == "factor_cov"


def test_combine_smw_end_to_end(panels):
    returns, factors = panels
    fit = fit_ols(returns, factors)
    precision = estimate_returns_precision(fit, NodewiseSettings(grid_size=25))
    again = combine_smw(precision.nodewise, fit)
    assert np.all(np.isfinite(precision.gamma))
    np.testing.assert_array_equal(precision.gamma, again.gamma)
    assert precision.bracket_condition >= 1.0


def test_toeplitz_examples():
    np.testing.assert_array_equal(toeplitz_cov(0.0, 4), np.eye(4))
    np.testing.assert_allclose(
        toeplitz_cov(0.5, 3), [[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]]
    )
    np.testing.assert_allclose(
        toeplitz_precision_closed_form(0.5, 3),
        [[4 / 3, -2 / 3, 0.0], [-2 / 3, 5 / 3, -2 / 3], [0.0, -2 / 3, 4 / 3]],
        atol=1e-15,
    )
    np.testing.assert_array_equal(toeplitz_precision_closed_form(0.0, 3), np.eye(3))


def test_toeplitz_oracle():
    for rho in (0.25, 0.5, 0.75):
        for p in range(2, 201):
            product = toeplitz_cov(rho, p) @ toeplitz_precision_closed_form(rho, p)
            np.testing.assert_allclose(product, np.eye(p), atol=1e-12)


def test_toeplitz_rejects_unit_rho():
    with pytest.raises(ValidationError):
        toeplitz_cov(1.0, 3)


def test_block_diag_cov(rng):
    single = random_spd(rng, 3)
    np.testing.assert_array_equal(block_diag_cov([single]), single)
    np.testing.assert_array_equal(block_diag_cov([[[2.0]], [[3.0]]]), np.diag([2.0, 3.0]))
    blocks = [random_spd(rng, 2), random_spd(rng, 3)]
    inverse = np.linalg.inv(block_diag_cov(blocks))
    np.testing.assert_allclose(inverse, block_diag_cov([np.linalg.inv(b) for b in blocks]), atol=1e-12)
    with pytest.raises(ValidationError):
        block_diag_cov([np.ones((2, 3))])
