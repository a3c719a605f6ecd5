import math

import numpy as np
import pytest

from featstack.errors import ShapeError
from featstack.evaluation import (EvalReport, MetricWithSE, ModelResult, error_correlation,
                                  mae_with_se, mse_with_se, redundancy_flags, weight_summary)

# error correlations reported for the GPU kernel performance data
# (OLS, lasso, ridge, bagging, random forest, gradient boosting)
GPU_CORRELATION = np.array([
    [1.00, 1.00, 1.00, 0.39, 0.39, 0.80],
    [1.00, 1.00, 1.00, 0.39, 0.39, 0.80],
    [1.00, 1.00, 1.00, 0.39, 0.39, 0.80],
    [0.39, 0.39, 0.39, 1.00, 0.98, 0.62],
    [0.39, 0.39, 0.39, 0.98, 1.00, 0.62],
    [0.80, 0.80, 0.80, 0.62, 0.62, 1.00],
])


def test_mse_worked_example():
    m = mse_with_se([0.0, 0.0], [1.0, 3.0])
    assert m.value == 5.0
    assert abs(m.se - 4.0) < 1e-12
    assert m.n == 2


def test_mae_worked_example():
    m = mae_with_se([0.0, 0.0], [1.0, 3.0])
    assert m.value == 2.0
    assert abs(m.se - 1.0) < 1e-12


def test_perfect_predictions_have_zero_error_and_se():
    y = np.arange(5.0)
    assert mse_with_se(y, y) == MetricWithSE(0.0, 0.0, 5)
    assert mae_with_se(y, y) == MetricWithSE(0.0, 0.0, 5)


def test_duplicating_rows_shrinks_se_by_sqrt_two():
    rng = np.random.default_rng(0)
    y, yhat = rng.normal(size=500), rng.normal(size=500)
    single = mse_with_se(y, yhat)
    double = mse_with_se(np.tile(y, 2), np.tile(yhat, 2))
    assert double.value == pytest.approx(single.value, rel=1e-14)
    # ddof=1 makes the ratio sqrt(2) only up to a (2n-2)/(2n-1) correction
    correction = math.sqrt((2 * 500 - 2) / (2 * 500 - 1))
    assert double.se * math.sqrt(2) == pytest.approx(single.se * correction, rel=1e-12)


def test_sign_flip_leaves_mae_unchanged():
    rng = np.random.default_rng(1)
    y, yhat = rng.normal(size=50), rng.normal(size=50)
    a = mae_with_se(y, yhat)
    b = mae_with_se(y, 2 * y - yhat)
    assert a.value == pytest.approx(b.value, rel=1e-14)
    assert a.se == pytest.approx(b.se, rel=1e-12)


def test_metrics_are_permutation_invariant():
    rng = np.random.default_rng(2)
    y, yhat = rng.normal(size=100), rng.normal(size=100)
    perm = rng.permutation(100)
    for fn in (mse_with_se, mae_with_se):
        a, b = fn(y, yhat), fn(y[perm], yhat[perm])
        assert a.value == pytest.approx(b.value, rel=1e-14)
        assert a.se == pytest.approx(b.se, rel=1e-12)


def test_metric_shape_errors():
    with pytest.raises(ShapeError):
        mse_with_se([1.0, 2.0], [1.0])
    with pytest.raises(ShapeError):
        mae_with_se([1.0], [1.0])


def test_identical_learners_are_perfectly_correlated():
    rng = np.random.default_rng(3)
    y = rng.normal(size=200)
    p = y + rng.normal(size=200)
    C = error_correlation(np.column_stack([p, p, y + rng.normal(size=200)]), y)
    assert C[0, 1] == 1.0
    np.testing.assert_array_equal(np.diag(C), 1.0)
    np.testing.assert_array_equal(C, C.T)


def test_opposite_residuals_are_anticorrelated():
    rng = np.random.default_rng(4)
    y = rng.normal(size=100)
    e = rng.normal(size=100)
    C = error_correlation(np.column_stack([y + e, y - e]), y)
    assert C[0, 1] == pytest.approx(-1.0, abs=1e-12)


def test_independent_residuals_are_nearly_uncorrelated():
    rng = np.random.default_rng(5)
    y = rng.normal(size=10_000)
    C = error_correlation(y[:, None] + rng.normal(size=(10_000, 2)), y)
    assert abs(C[0, 1]) < 0.05


def test_constant_residual_column_is_undefined():
    y = np.arange(10.0)
    C = error_correlation(np.column_stack([y + 1.0, y + np.sin(y)]), y)
    assert math.isnan(C[0, 0]) and math.isnan(C[0, 1]) and math.isnan(C[1, 0])
    assert C[1, 1] == 1.0


def test_error_correlation_is_shift_invariant():
    rng = np.random.default_rng(6)
    y = rng.normal(size=60)
    P = y[:, None] + rng.normal(size=(60, 3))
    np.testing.assert_allclose(error_correlation(P + 7.5, y + 7.5), error_correlation(P, y),
                               atol=1e-12)


def test_weight_summary_quantiles():
    summary = weight_summary(np.column_stack([np.arange(1.0, 6.0), np.full(5, 0.25)]),
                             ["a", "b"])
    assert [s["name"] for s in summary] == ["a", "b"]
    assert (summary[0]["min"], summary[0]["q25"], summary[0]["median"],
            summary[0]["q75"], summary[0]["max"]) == (1.0, 2.0, 3.0, 4.0, 5.0)
    assert all(summary[1][k] == 0.25 for k in ("min", "q25", "median", "q75", "max"))


def test_weight_summary_interpolates():
    s = weight_summary(np.array([[0.0], [1.0]]))[0]
    assert (s["q25"], s["median"], s["q75"]) == (0.25, 0.5, 0.75)


def test_redundancy_flags_on_gpu_table_pattern():
    pairs = redundancy_flags(GPU_CORRELATION)
    assert [(i, j) for i, j, _ in pairs] == [(0, 1), (0, 2), (1, 2)]
    assert all(rho == 1.0 for _, _, rho in pairs)


def test_redundancy_flags_edge_cases():
    assert redundancy_flags(np.eye(4)) == []
    assert redundancy_flags(GPU_CORRELATION, threshold=1.01) == []
    pairs = redundancy_flags(GPU_CORRELATION, threshold=0.9)
    assert pairs[-1] == (3, 4, 0.98)


def _report():
    rng = np.random.default_rng(7)
    y = rng.normal(size=20)
    return EvalReport(
        models=[ModelResult("unns", "stacked", mse_with_se(y, y + 0.1 * rng.normal(size=20)),
                            mae_with_se(y, y + 0.3), hidden_layers=3, fit_time=1.25,
                            negative_weight_fraction=0.0),
                ModelResult("ols", "base", mse_with_se(y, 0 * y), mae_with_se(y, 0 * y))],
        learner_names=["ols", "lasso"],
        error_correlation=np.array([[1.0, 0.123456789], [0.123456789, np.nan]]),
        weight_quantiles={"unns": weight_summary(rng.uniform(size=(20, 2)), ["ols", "lasso"])},
        redundancy_pairs=[(0, 1, 0.995)],
    )


def test_report_json_round_trip_is_exact():
    report = _report()
    clone = EvalReport.from_json(report.to_json())
    assert clone.to_json() == report.to_json()
    assert clone.models[0].mse == report.models[0].mse
    assert clone.models[0].fit_time == 1.25
    np.testing.assert_array_equal(clone.error_correlation, report.error_correlation)
    assert clone.redundancy_pairs == [(0, 1, 0.995)]


def test_report_json_can_drop_timings():
    clone = EvalReport.from_json(_report().to_json(include_timings=False))
    assert clone.fit_times == {}
    assert clone.model("unns").hidden_layers == 3
