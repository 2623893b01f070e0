import os

import numpy as np
import pydantic
import pytest

from src.core_finance.factor_model import fit_ols
from src.core_finance.precision import NodewiseSettings, Selector, combine_smw, nodewise_from_residuals, toeplitz_cov
from src.core_finance.simulation import (
    CATEGORIES,
    TrueModel,
    apply_mask,
    block_layout,
    build_true_covariance,
    correlation_mask,
    generate_panel,
    oracle_nodewise_diagnostic,
    run_simulation,
    spd_guard,
    summary_table,
    true_sharpe_quantities,
)
from src.parsers.panel_csv import FactorPanel, ReturnsPanel
from src.schemas.simulation import CalibrationSpec, Estimator, PRule, SimConfig

from conftest import random_spd


def _config(**overrides):
    params = dict(
        n=40,
        p_rule=PRule.EXPLICIT,
        p=8,
        rho=0.5,
        replications=2,
        seed=5,
        grid_size=15,
    )
    params.update(overrides)
    return SimConfig(**params)


def _record_values(report):
    return [
        [record.errors.get(key, np.nan) for key in sorted(report.mean_errors)]
        for record in report.records
    ]


def test_rho_zero_with_uncorrelated_base_gives_diagonal_sigma_n():
    config = _config(rho=0.0, calibration=CalibrationSpec(base_correlation=0.0))
    truth = build_true_covariance(config)
    off_diagonal = truth.sigma_n - np.diag(np.diag(truth.sigma_n))
    np.testing.assert_array_equal(off_diagonal, 0.0)
    assert truth.ridge == 0.0


def test_single_full_block_leaves_base_unchanged(rng):
    config = _config(rho=None, block_sizes=[8])
    mask = correlation_mask(config, 8)
    np.testing.assert_array_equal(mask, np.ones((8, 8)))
    base = random_spd(rng, 8)
    base = (base + base.T) / 2.0
    masked, ridge = apply_mask(base, mask)
    np.testing.assert_array_equal(masked, base)
    assert ridge == 0.0


def test_unit_base_times_toeplitz_is_toeplitz():
    masked, ridge = apply_mask(np.ones((3, 3)), toeplitz_cov(0.5, 3))
    np.testing.assert_array_equal(masked, toeplitz_cov(0.5, 3))
    assert ridge == 0.0


def test_block_layout():
    assert block_layout([3], 7) == [3, 3, 1]
    assert block_layout([2, 5], 7) == [2, 5]


def test_spd_guard_adds_ridge():
    guarded, ridge = spd_guard(np.ones((3, 3)))
    assert ridge > 0.0
    assert np.linalg.eigvalsh(guarded)[0] > 0.0


def test_truth_mean_includes_alpha():
    truth = build_true_covariance(_config())
    np.testing.assert_allclose(truth.mu, truth.alpha + truth.loadings @ truth.factor_mean)
    np.testing.assert_allclose(
        truth.sigma_y, truth.loadings @ truth.factor_cov @ truth.loadings.T + truth.sigma_n, atol=1e-15
    )


def test_generate_panel_without_noise_is_deterministic_mean():
    p, k = 3, 2
    truth = TrueModel(
        sigma_n=np.zeros((p, p)),
        sigma_y=np.zeros((p, p)),
        mu=np.zeros(p),
        loadings=np.array([[1.0, 0.5], [0.2, 0.3], [0.9, -0.4]]),
        factor_cov=np.zeros((k, k)),
        factor_mean=np.array([0.01, 0.02]),
        alpha=np.array([0.001, -0.002, 0.0]),
    )
    panel = generate_panel(truth, 25, seed=3)
    expected = truth.alpha + truth.loadings @ truth.factor_mean
    np.testing.assert_allclose(panel.returns.values, np.repeat(expected[:, None], 25, axis=1), atol=1e-15)
    assert panel.factors.factor_ids == ("MKT", "SMB")


def test_generate_panel_is_seeded():
    truth = build_true_covariance(_config())
    first = generate_panel(truth, 40, seed=11)
    second = generate_panel(truth, 40, seed=11)
    assert np.array_equal(first.returns.values, second.returns.values)
    assert np.array_equal(first.true_errors, second.true_errors)


def test_generate_panel_moments_match_truth():
    truth = build_true_covariance(_config(p=4))
    panel = generate_panel(truth, 100_000, seed=2)
    values = panel.returns.values
    standard_errors = np.sqrt(np.diag(truth.sigma_y) / values.shape[1])
    assert np.all(np.abs(values.mean(axis=1) - truth.mu) < 4.0 * standard_errors)


def test_true_quantities_identity_case():
    p, c = 4, 0.1
    targets = true_sharpe_quantities(np.eye(p), np.full(p, c), rho1=c)
    expected = c * np.sqrt(p)
    assert targets.gmv_sr == pytest.approx(expected)
    assert targets.msr == pytest.approx(expected)
    assert targets.msr_star == pytest.approx(expected)
    assert targets.sr_star == pytest.approx(expected)


def test_true_quantities_hand_instance():
    sigma_y = np.array([[2.0, 0.5], [0.5, 1.0]])
    mu = np.array([0.02, 0.01])
    gamma = np.linalg.inv(sigma_y)
    a = gamma.sum() / 2
    f = (gamma @ mu).sum() / 2
    d = mu @ gamma @ mu / 2
    targets = true_sharpe_quantities(sigma_y, mu, rho1=0.015)
    assert targets.gmv_sr == pytest.approx(np.sqrt(2) * f / np.sqrt(a), rel=1e-12)
    assert targets.mmv_sr == pytest.approx(
        0.015 * np.sqrt(2 * (a * d - f ** 2) / (a * 0.015 ** 2 - 2 * f * 0.015 + d)), rel=1e-12
    )
    assert targets.sr_star == pytest.approx(np.sqrt(2 * d), rel=1e-12)


def test_true_quantities_permutation_invariant(rng):
    sigma_y = random_spd(rng, 5)
    mu = rng.normal(0.01, 0.01, size=5)
    perm = np.array([2, 4, 0, 1, 3])
    base = true_sharpe_quantities(sigma_y, mu, 0.01)
    permuted = true_sharpe_quantities(sigma_y[np.ix_(perm, perm)], mu[perm], 0.01)
    for key, value in base.snapshot().items():
        assert permuted.snapshot()[key] == pytest.approx(value, rel=1e-9, abs=1e-12)


def test_run_simulation_is_reproducible():
    first = run_simulation(_config(replications=1))
    second = run_simulation(_config(replications=1))
    np.testing.assert_array_equal(_record_values(first), _record_values(second))
    assert first.truth_snapshot == second.truth_snapshot


def test_run_simulation_independent_of_threads():
    single = run_simulation(_config(replications=3, threads=1))
    multi = run_simulation(_config(replications=3, threads=3))
    np.testing.assert_array_equal(_record_values(single), _record_values(multi))


def test_report_shape_and_nonnegative_errors():
    report = run_simulation(_config(estimators=[Estimator.NODEWISE, Estimator.SAMPLE_PINV]))
    assert len(report.records) == 2
    for record in report.records:
        if not record.ok:
            continue
        for category in CATEGORIES:
            value = record.errors[("nodewise", category)]
            assert np.isfinite(value) and value >= 0.0
    rows = report.rows()
    assert {row["estimator"] for row in rows} == {"nodewise", "sample_pinv"}
    assert not summary_table([report]).empty


def test_oracle_diagnostic_recorded():
    report = run_simulation(_config(replications=1, oracle_diagnostic=True, selector=Selector.GIC))
    record = report.records[0]
    assert record.ok
    assert record.precision_error >= 0.0
    assert record.oracle_precision_error >= 0.0


@pytest.mark.parametrize(
    "overrides",
    [
        {"rho": 1.2},
        {"rho": 0.5, "block_sizes": [4, 4]},
        {"rho": None},
        {"n": 10},
        {"block_sizes": [3, 3], "rho": None},
        {"replications": 0},
    ],
)
def test_sim_config_validation(overrides):
    with pytest.raises(pydantic.ValidationError):
        _config(**overrides)


def test_p_rules():
    assert _config(p_rule=PRule.HALF_N, p=None).resolved_p() == 20
    assert _config(p_rule=PRule.THREE_HALVES_N, p=None).resolved_p() == 60
    assert _config(rho=None, block_sizes=[4]).design_label() == "blocks=4"


def test_more_assets_than_observations_run_without_failures():
    report = run_simulation(_config(p_rule=PRule.THREE_HALVES_N, p=None, replications=2))
    assert report.p == 60
    assert report.failure_count == 0
    for category in CATEGORIES:
        assert np.isfinite(report.mean_errors[("nodewise", category)])


def test_zero_exposure_feasible_fit_matches_oracle(rng):
    n = 60
    factor = rng.normal(0.0, 0.05, size=n)
    errors = rng.multivariate_normal(np.zeros(5), 1e-3 * toeplitz_cov(0.5, 5), size=n).T
    errors -= np.outer(errors @ factor, factor) / (factor @ factor)
    labels = [f"t{t + 1:04d}" for t in range(n)]
    fit = fit_ols(
        ReturnsPanel(errors, [f"A{j}" for j in range(5)], labels), FactorPanel(factor[None, :], ["MKT"], labels)
    )
    np.testing.assert_allclose(fit.loadings, 0.0, atol=1e-12)

    settings = NodewiseSettings(grid_size=30)
    feasible = nodewise_from_residuals(fit.residuals, settings, fit.asset_ids)
    oracle = oracle_nodewise_diagnostic(errors, settings, fit.asset_ids)
    np.testing.assert_allclose(feasible.omega, oracle.omega, rtol=1e-8, atol=1e-6)
    np.testing.assert_allclose(combine_smw(feasible, fit).gamma, feasible.omega, rtol=1e-8, atol=1e-6)


def test_oracle_error_not_above_feasible_error_on_average():
    report = run_simulation(
        _config(
            p=10,
            rho=0.0,
            replications=20,
            oracle_diagnostic=True,
            calibration=CalibrationSpec(base_correlation=0.0),
        )
    )
    records = [record for record in report.records if record.ok]
    assert len(records) == 20
    feasible = np.mean([record.precision_error for record in records])
    oracle = np.mean([record.oracle_precision_error for record in records])
    assert oracle <= feasible


def _errors_by_n(p_rule, category, replications=20):
    errors = []
    for n in (100, 200, 400):
        config = SimConfig(
            n=n,
            p_rule=p_rule,
            rho=0.5,
            replications=replications,
            seed=1,
            grid_size=30,
            lambda_min_ratio=0.05,
            threads=os.cpu_count() or 1,
        )
        report = run_simulation(config)
        assert report.failure_count == 0
        errors.append(report.mean_errors[("nodewise", category)])
    return errors


# mean |SR^2 estimate - SR^2| of the nodewise GIC estimator at rho = 0.5, n = 100, 200, 400
REFERENCE_ERRORS = {
    "OOS-MSR": (1.244, 0.585, 0.321),
    "GMV-SR": (0.760, 0.239, 0.159),
}


@pytest.mark.slow
@pytest.mark.parametrize("p_rule", [PRule.HALF_N, PRule.THREE_HALVES_N])
def test_gmv_error_shrinks_with_n(p_rule):
    errors = _errors_by_n(p_rule, "GMV-SR", replications=40)
    assert errors[0] > errors[1] > errors[2]


@pytest.mark.slow
@pytest.mark.xfail(
    strict=False,
    reason="with p/n fixed the OOS-MSR error keeps a floor near SR*^2 (p/n)/(SR*^2 + p/n) "
    "under the synthetic calibration, so the decline is not guaranteed",
)
def test_oos_msr_error_shrinks_with_n():
    errors = _errors_by_n(PRule.HALF_N, "OOS-MSR")
    assert errors[0] > errors[1] > errors[2]


@pytest.mark.slow
@pytest.mark.xfail(
    strict=False,
    reason="reference magnitudes come from an equity calibration; the synthetic defaults "
    "set different Sharpe-ratio levels",
)
@pytest.mark.parametrize("category", sorted(REFERENCE_ERRORS))
def test_error_magnitudes_near_reference(category):
    errors = _errors_by_n(PRule.HALF_N, category)
    for value, reference in zip(errors, REFERENCE_ERRORS[category]):
        assert reference / 5.0 <= value <= 5.0 * reference
