"""Data-generating processes, error metrics, baselines, benchmark harness."""

import numpy as np
import pytest

from distmatch import (
    BadSpec,
    FitConfig,
    ProbabilityGrid,
    SimulationSpec,
    baseline_linear_propensity_flags,
    baseline_lr_cate,
    generate,
    integrated_absolute_error,
    integrated_relative_error,
    run_benchmark,
)
from distmatch.simulation import DGP_NAMES, generate_split, scalarize


QUICK = FitConfig(n_starts=1, budget_per_start=60, k=5)


def test_spec_validation():
    with pytest.raises(BadSpec):
        SimulationSpec(dgp="nope")
    with pytest.raises(BadSpec):
        SimulationSpec(dgp="linear", n=10)
    with pytest.raises(BadSpec):
        SimulationSpec(dgp="linear", split_ratio=1.5)


@pytest.mark.parametrize("name", DGP_NAMES)
def test_generate_shapes_and_monotone_outcomes(name):
    spec = SimulationSpec(dgp=name, n=40, seed=2)
    data, truth = generate(spec)
    assert len(data) == 40
    assert truth.true_cate.shape == (40, len(spec.grid))
    assert truth.propensity.shape == (40,)
    assert set(np.unique(data.treatments)) <= {0, 1}
    for unit in data.units:
        assert np.all(np.diff(unit.outcome.values) >= 0)


@pytest.mark.parametrize("name", DGP_NAMES)
def test_generate_deterministic(name):
    spec = SimulationSpec(dgp=name, n=30, seed=5)
    a, ta = generate(spec)
    b, tb = generate(spec)
    np.testing.assert_array_equal(a.outcome_values, b.outcome_values)
    np.testing.assert_array_equal(a.treatments, b.treatments)
    np.testing.assert_array_equal(ta.true_cate, tb.true_cate)


def test_linear_truth_is_constant_ten():
    _, truth = generate(SimulationSpec(dgp="linear", n=25, seed=0))
    assert np.all(truth.true_cate == 10.0)


def test_variance_truth_antisymmetric_zero_median():
    spec = SimulationSpec(dgp="variance", n=25, seed=0)
    _, truth = generate(spec)
    mid = np.argmin(np.abs(spec.grid.probs - 0.5))
    assert np.allclose(truth.true_cate[:, mid], 0.0, atol=1e-9)
    # tau(q) = (s1 - s0) z(q) flips sign across the median
    np.testing.assert_allclose(truth.true_cate,
                               -truth.true_cate[:, ::-1], atol=1e-9)


def test_positivity_corner_labels_exact():
    data, truth = generate(SimulationSpec(dgp="positivitycorner", n=200,
                                          seed=1))
    x = truth.baseline_features
    corner = (x[:, 0] <= -0.5) & (x[:, 1] <= -0.5)
    np.testing.assert_array_equal(truth.positivity_violation, corner)
    assert np.all(data.treatments[corner] == 0)


def test_mixturebeta_outcomes_in_unit_interval():
    data, _ = generate(SimulationSpec(dgp="mixturebeta", n=25, seed=3))
    assert data.outcome_values.min() >= 0.0
    assert data.outcome_values.max() <= 1.0


def test_distcov_distributional_covariate():
    spec = SimulationSpec(dgp="distcov", n=25, seed=4)
    data, truth = generate(spec)
    assert data.schema[0].kind == "distribution"
    # baseline feature 0 equals the covariate's quantile integral (u-1)/2
    integral = data.covariate_values[:, 0, :] @ spec.grid.norm_weights
    np.testing.assert_allclose(truth.baseline_features[:, 0], integral,
                               atol=1e-3)


def test_generate_split_arm_floor():
    spec = SimulationSpec(dgp="linear", n=120, seed=0, k=5, optimizer=QUICK)
    (train, ttr), (est, tes) = generate_split(spec)
    for part in (train, est):
        assert (part.treatments == 0).sum() > 5
        assert (part.treatments == 1).sum() > 5
    assert ttr.true_cate.shape[0] == len(train)
    assert tes.true_cate.shape[0] == len(est)


# --- metrics ----------------------------------------------------------------------

def test_ire_exact_constant_offset():
    grid = ProbabilityGrid.uniform(99)
    true = np.full(len(grid), 10.0)
    assert integrated_relative_error(true + 1.0, true, grid=grid) \
        == pytest.approx(10.0, abs=1e-12)


def test_ire_skips_near_zero_truth():
    grid = ProbabilityGrid.uniform(99)
    true = np.full(len(grid), 2.0)
    true[40] = 0.0
    est = true + 0.5
    ire, skipped = integrated_relative_error(est, true, grid=grid,
                                             with_details=True)
    assert skipped == pytest.approx(grid.norm_weights[40])
    assert ire == pytest.approx(25.0, abs=1e-9)


def test_ire_all_zero_truth_is_nan():
    grid = ProbabilityGrid.uniform(9)
    out = integrated_relative_error(np.ones(9), np.zeros(9), grid=grid)
    assert np.isnan(out)


def test_integrated_absolute_error():
    grid = ProbabilityGrid.uniform(99)
    a, b = np.full(len(grid), 3.0), np.full(len(grid), 1.0)
    assert integrated_absolute_error(a, b, grid) == pytest.approx(2.0)


# --- baselines --------------------------------------------------------------------

def test_scalarize_mixed_schema():
    spec = SimulationSpec(dgp="distcov", n=25, seed=5)
    data, _ = generate(spec)
    s = scalarize(data)
    assert s.shape == (25, 10)


def test_baseline_lr_recovers_linear_truth():
    spec = SimulationSpec(dgp="linear", n=300, seed=6, optimizer=QUICK)
    (train, ttr), (est, tes) = generate_split(spec)
    cate = baseline_lr_cate(train, est)
    # Linear DGP is exactly linear, so the baseline should be near tau = 10
    assert np.median(np.abs(cate - 10.0)) < 1.5


def test_baseline_propensity_flags_shape():
    data, truth = generate(SimulationSpec(dgp="positivitycorner", n=200,
                                          seed=7))
    flags = baseline_linear_propensity_flags(data)
    assert flags.shape == (200,)
    assert flags.dtype == bool


# --- harness ----------------------------------------------------------------------

def test_run_benchmark_validation():
    spec = SimulationSpec(dgp="linear", n=60, seed=0, optimizer=QUICK, k=3)
    with pytest.raises(BadSpec):
        run_benchmark("nope", spec, 2)
    with pytest.raises(BadSpec):
        run_benchmark("cate", spec, 0)


def test_run_benchmark_cate_records_and_determinism():
    spec = SimulationSpec(dgp="linear", n=80, seed=1, optimizer=QUICK, k=3)
    a = run_benchmark("cate", spec, 2)
    b = run_benchmark("cate", spec, 2)
    assert a.methods() == ["matching", "lr_per_quantile"]
    np.testing.assert_array_equal(a.values("matching"),
                                  b.values("matching"))
    rows = list(a.csv_rows())
    assert rows[0][0] == "replicate"
    assert len(rows) == 1 + 4  # 2 replicates x 2 methods
    assert "matching" in a.summary_text()


def test_run_benchmark_k_sensitivity_methods():
    spec = SimulationSpec(dgp="linear", n=120, seed=2, optimizer=QUICK, k=5)
    res = run_benchmark("k_sensitivity", spec, 1, k_values=(2, 3))
    assert res.methods() == ["k=2", "k=3"]


def test_run_benchmark_coverage_in_unit_interval():
    spec = SimulationSpec(dgp="linear", n=120, seed=3, optimizer=QUICK, k=3)
    res = run_benchmark("coverage", spec, 2)
    v = res.values("matching")
    assert np.all((0.0 <= v) & (v <= 1.0))
