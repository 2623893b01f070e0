import math

import numpy as np
import pytest
from sklearn.linear_model import Lasso

from src.core_finance.lasso_path import (
    KKT_TOLERANCE,
    CrossProducts,
    LassoPath,
    LassoProblem,
    cv_test_folds,
    gic_scores,
    kkt_violation,
    lambda_grid,
    path,
    select_cv,
    select_gic,
    solve,
)
from src.core_finance import lasso_path as lasso_module
from src.errors import LassoConvergenceError, ValidationError


def _problem(rng, n=60, m=8, noise=0.5, standardize=True):
    z = rng.standard_normal((n, m))
    g0 = np.zeros(m)
    g0[:3] = [1.5, -2.0, 0.75]
    r = z @ g0 + noise * rng.standard_normal(n)
    return LassoProblem(z, r, standardize=standardize)


def _objective(problem, coef, lam):
    resid = problem.response - problem.design @ coef
    return resid @ resid / problem.n + 2.0 * lam * np.abs(coef).sum()


def test_problem_validation():
    with pytest.raises(ValidationError):
        LassoProblem(np.ones((1, 2)), np.ones(1))
    with pytest.raises(ValidationError):
        LassoProblem(np.array([[1.0, np.nan], [0.0, 1.0]]), np.ones(2))
    with pytest.raises(ValidationError):
        LassoProblem(np.ones((3, 2)), np.ones(4))


def test_zero_solution_above_lambda_max(rng):
    problem = _problem(rng, standardize=False)
    lam_max = np.max(np.abs(problem.design.T @ problem.response)) / problem.n
    np.testing.assert_array_equal(solve(problem, lam_max * 1.0001), 0.0)


def test_lambda_zero_matches_normal_equations(rng):
    z = rng.standard_normal((500, 4))
    r = z @ np.array([0.3, -0.2, 0.1, 0.05]) + 0.1 * rng.standard_normal(500)
    coef = solve(LassoProblem(z, r, standardize=False), 0.0)
    np.testing.assert_allclose(coef, np.linalg.solve(z.T @ z, z.T @ r), atol=1e-8)


def test_orthonormal_design_soft_threshold(rng):
    n = 40
    q, _ = np.linalg.qr(rng.standard_normal((n, 3)))
    z = np.sqrt(n) * q  # Z'Z/n = I
    target = np.array([0.5, -0.1, -0.35])
    r = z @ target + 0.0
    coef = solve(LassoProblem(z, r, standardize=False), 0.2)
    np.testing.assert_allclose(coef, [0.3, 0.0, -0.15], atol=1e-10)


def test_matches_sklearn(rng):
    problem = _problem(rng, n=80, m=10, standardize=False)
    for lam in (0.5, 0.1, 0.02):
        ours = solve(problem, lam)
        oracle = Lasso(alpha=lam, fit_intercept=False, tol=1e-12, max_iter=200_000)
        oracle.fit(problem.design, problem.response)
        np.testing.assert_allclose(ours, oracle.coef_, atol=1e-6)


def test_kkt_on_random_paths():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n, m = rng.integers(20, 60), rng.integers(2, 12)
        problem = LassoProblem(rng.standard_normal((n, m)), rng.standard_normal(n))
        lasso_path = path(problem, grid_size=15)
        assert np.all(lasso_path.kkt_violations <= KKT_TOLERANCE)


def test_kkt_certificate_in_original_coordinates(rng):
    problem = _problem(rng, standardize=False)
    lam = 0.05
    coef = solve(problem, lam)
    gram = problem.design.T @ problem.design / problem.n
    corr = problem.design.T @ problem.response / problem.n
    assert kkt_violation(gram, corr, coef, lam) <= 1e-7


def test_objective_beats_zero_and_ols(rng):
    problem = _problem(rng, n=100, m=5, standardize=False)
    lam = 0.05
    coef = solve(problem, lam)
    ols = np.linalg.lstsq(problem.design, problem.response, rcond=None)[0]
    value = _objective(problem, coef, lam)
    assert value <= _objective(problem, np.zeros(problem.m), lam) + 1e-9
    assert value <= _objective(problem, ols, lam) + 1e-9


def test_solve_is_deterministic(rng):
    problem = _problem(rng)
    assert np.array_equal(solve(problem, 0.05), solve(problem, 0.05))


def test_standardized_solution_equivariant_to_column_scaling(rng):
    problem = _problem(rng)
    scaled_design = problem.design.copy()
    scaled_design[:, 1] *= 7.5
    base = solve(problem, 0.05)
    scaled = solve(LassoProblem(scaled_design, problem.response), 0.05)
    expected = base.copy()
    expected[1] /= 7.5
    np.testing.assert_allclose(scaled, expected, atol=1e-8)


def test_negative_lambda_rejected(rng):
    with pytest.raises(ValidationError):
        solve(_problem(rng), -0.1)


def test_grid_size_two_endpoints(rng):
    problem = _problem(rng)
    lasso_path = path(problem, grid_size=2, lambda_min_ratio=1e-2)
    assert lasso_path.lambdas[0] == pytest.approx(lasso_path.lambda_max)
    assert lasso_path.lambdas[1] == pytest.approx(lasso_path.lambda_max * 1e-2)
    np.testing.assert_array_equal(lasso_path.coefficients[:, 0], 0.0)


def test_path_monotone_properties(rng):
    problem = _problem(rng, n=100, m=12)
    lasso_path = path(problem, grid_size=40)
    assert np.all(np.diff(lasso_path.lambdas) < 0)
    assert np.all(np.diff(lasso_path.ssr) <= 1e-9 * max(1.0, lasso_path.ssr[0]))
    assert lasso_path.ssr[-1] <= lasso_path.ssr[0]
    assert lasso_path.nonzero_counts[0] == 0


def test_path_matches_cold_solves(rng):
    problem = _problem(rng, n=100, m=6)
    lasso_path = path(problem, grid_size=10)
    for i in (0, 4, 9):
        np.testing.assert_allclose(
            lasso_path.coefficients[:, i], solve(problem, lasso_path.lambdas[i]), atol=1e-7
        )


def test_lambda_grid_validation():
    with pytest.raises(ValidationError):
        lambda_grid(1.0, 1, 1e-3)
    with pytest.raises(ValidationError):
        lambda_grid(1.0, 10, 1.5)
    np.testing.assert_allclose(lambda_grid(0.0, 3, 1e-2), [1.0, 0.1, 0.01])


def _manual_path(ssr, counts, n=100, m=10):
    ssr = np.asarray(ssr, dtype=float)
    return LassoPath(
        lambdas=np.geomspace(1.0, 0.1, len(ssr)),
        coefficients=np.zeros((m, len(ssr))),
        ssr=ssr,
        nonzero_counts=np.asarray(counts),
        n_obs=n,
        lambda_max=1.0,
        kkt_violations=np.zeros(len(ssr)),
    )


def test_gic_hand_arithmetic():
    lasso_path = _manual_path([100.0], [2])
    score = gic_scores(lasso_path, p_ambient=11, n=100)[0]
    expected = 1.0 + 2.0 * math.log(10) * math.log(math.log(100)) / 100
    assert score == pytest.approx(expected, rel=1e-14)
    assert score == pytest.approx(1.07033, abs=1e-5)


def test_gic_ties_go_to_largest_lambda():
    selection = select_gic(_manual_path([50.0, 50.0, 50.0], [0, 0, 0]), p_ambient=11, n=100)
    assert selection.index == 0


def test_gic_picks_minimum():
    # GIC values 0.5 and 0.4 with q = 0
    selection = select_gic(_manual_path([50.0, 40.0], [0, 0]), p_ambient=11, n=100)
    assert selection.index == 1
    assert selection.score == pytest.approx(0.4)


def test_gic_validation():
    with pytest.raises(ValidationError):
        gic_scores(_manual_path([1.0], [0], n=2), p_ambient=5, n=2)
    with pytest.raises(ValidationError):
        gic_scores(_manual_path([1.0], [0]), p_ambient=1, n=100)


def test_cv_folds_partition():
    folds = cv_test_folds(23, 5, seed=11)
    assert sorted(np.concatenate(folds).tolist()) == list(range(23))
    blocked = cv_test_folds(10, 2, seed=0, blocked=True)
    np.testing.assert_array_equal(blocked[0], np.arange(5))


def test_cv_folds_validation():
    with pytest.raises(ValidationError):
        cv_test_folds(10, 1, seed=0)
    with pytest.raises(ValidationError):
        cv_test_folds(5, 6, seed=0)


def test_cv_noise_prefers_large_lambda():
    rng = np.random.default_rng(3)
    picked_large = []
    for trial in range(50):
        z = rng.standard_normal((40, 5))
        problem = LassoProblem(z, rng.standard_normal(40))
        lam_max = np.max(np.abs(CrossProducts.from_data(z, problem.response).system(True).corr))
        grid = [lam_max, lam_max * 1e-3]
        picked_large.append(select_cv(problem, 5, grid, seed=trial).lam >= np.median(grid))
    assert sum(picked_large) > 25


def test_cv_exact_signal_prefers_small_lambda(rng):
    z = rng.standard_normal((50, 4))
    problem = LassoProblem(z, z @ np.array([1.0, -1.0, 0.5, 2.0]) + 1e-8 * rng.standard_normal(50))
    lam_max = np.max(np.abs(CrossProducts.from_data(z, problem.response).system(True).corr))
    grid = np.geomspace(lam_max, lam_max * 1e-4, 8)
    selection = select_cv(problem, 5, grid, seed=1)
    assert selection.lam == pytest.approx(grid[-1])


def test_leave_one_out_runs(rng):
    z = rng.standard_normal((10, 3))
    problem = LassoProblem(z, rng.standard_normal(10))
    selection = select_cv(problem, 10, [0.5, 0.1, 0.01], seed=0)
    assert np.all(np.isfinite(selection.coefficients))


def test_cv_fold_moments_match_direct_training_sums(rng):
    z = rng.standard_normal((30, 3))
    r = rng.standard_normal(30)
    full = CrossProducts.from_data(z, r)
    test_idx = np.arange(5, 11)
    train_idx = np.setdiff1d(np.arange(30), test_idx)
    train = full - CrossProducts.from_data(z[test_idx], r[test_idx])
    direct = CrossProducts.from_data(z[train_idx], r[train_idx])
    np.testing.assert_allclose(train.zz, direct.zz, atol=1e-12)
    np.testing.assert_allclose(train.zr, direct.zr, atol=1e-12)
    assert train.n == 24


def test_more_columns_than_rows_path_is_certified(rng):
    # rank-deficient Gram: coefficients can drift along flat directions near λ_min
    z = rng.standard_normal((30, 59))
    r = z[:, :3] @ np.array([1.0, -0.5, 0.25]) + 0.1 * rng.standard_normal(30)
    lasso_path = path(LassoProblem(z, r), grid_size=30, lambda_min_ratio=1e-3)
    assert np.all(lasso_path.kkt_violations <= KKT_TOLERANCE)
    assert np.all(np.isfinite(lasso_path.coefficients))


def test_uncertified_solution_raises(rng, monkeypatch):
    problem = _problem(rng, standardize=False)
    lam_max = np.max(np.abs(problem.design.T @ problem.response)) / problem.n
    monkeypatch.setattr(lasso_module, "MAX_GRADIENT_REFRESHES", 0)
    with pytest.raises(LassoConvergenceError) as info:
        solve(problem, 0.1 * lam_max)
    assert info.value.kkt_violation == pytest.approx(0.9 * lam_max)
    assert info.value.lam == pytest.approx(0.1 * lam_max)


def test_sweep_cap_without_certificate_raises(rng, monkeypatch):
    base = rng.standard_normal(50)
    z = np.column_stack([base, base + 0.01 * rng.standard_normal(50), rng.standard_normal(50)])
    problem = LassoProblem(z, z @ np.array([1.0, 1.0, 0.5]), standardize=False)
    monkeypatch.setattr(lasso_module, "MAX_SWEEPS", 1)
    with pytest.raises(LassoConvergenceError) as info:
        solve(problem, 1e-4)
    assert info.value.kkt_violation > KKT_TOLERANCE
