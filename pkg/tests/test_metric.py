"""Learned metric: distances, KNN sets, training loss, optimizer."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distmatch import (
    ArmTooSmall,
    FitConfig,
    MetricParams,
    PoolTooSmall,
    ProbabilityGrid,
    covariate_distance,
    fit_metric,
    knn_predict,
    knn_set,
    training_loss,
    wasserstein_distance,
)

from conftest import random_scalar_dataset, scalar_dataset


def brute_force_distance(m, a, b):
    """Oracle: weighted sum of squared W2 distances, one term per covariate."""
    total = 0.0
    for w, fa, fb in zip(m.weights, a.covariates, b.covariates):
        total += w * wasserstein_distance(fa, fb, 2) ** 2
    return total


def test_covariate_distance_matches_oracle(grid):
    rng = np.random.default_rng(0)
    data = random_scalar_dataset(rng, 6, d=3, grid=grid)
    m = MetricParams(np.array([0.5, 2.0, 1.0]))
    for a in data.units[:3]:
        for b in data.units[3:]:
            assert covariate_distance(m, a, b) == pytest.approx(
                brute_force_distance(m, a, b), rel=1e-10)


def test_covariate_distance_point_masses(grid):
    data = scalar_dataset([[0.0, 0.0], [3.0, 4.0]], [0, 1], [0.0, 0.0], grid)
    m = MetricParams(np.array([1.0, 1.0]))
    assert covariate_distance(m, *data.units) == pytest.approx(25.0,
                                                               abs=1e-9)


def test_metric_params_validation():
    with pytest.raises(ValueError):
        MetricParams(np.array([-1.0]))
    with pytest.raises(ValueError):
        MetricParams(np.array([1.0]), c=-0.5)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0))
def test_distance_scales_linearly_in_weights(lam):
    grid = ProbabilityGrid.uniform(9)
    data = scalar_dataset([[1.0, -2.0], [0.5, 3.0]], [0, 1], [0.0, 0.0], grid)
    base = covariate_distance(MetricParams(np.ones(2)), *data.units)
    scaled = covariate_distance(MetricParams(lam * np.ones(2)), *data.units)
    assert scaled == pytest.approx(lam * base, rel=1e-10)


def test_knn_set_brute_force_oracle(grid):
    rng = np.random.default_rng(5)
    data = random_scalar_dataset(rng, 15, d=2, grid=grid)
    m = MetricParams(np.array([1.0, 0.3]))
    query = data.units[0]
    arm = data.units[1].treatment
    pool = [u for u in data.units[1:] if u.treatment == arm]
    group = knn_set(query, pool, 4, m)
    oracle = sorted(pool, key=lambda u: (brute_force_distance(m, query, u),
                                         u.id))[:4]
    assert list(group.neighbor_ids) == [u.id for u in oracle]
    assert np.all(np.diff(group.distances) >= 0)
    assert group.diameter == pytest.approx(group.distances.mean())


def test_knn_set_tie_breaks_toward_lower_id(grid):
    # identical covariates everywhere: order must follow ids ascending
    data = scalar_dataset(np.zeros((5, 1)), [0] * 5, np.arange(5.0), grid,
                          ids=[30, 10, 20, 50, 40])
    m = MetricParams(np.ones(1))
    group = knn_set(data.units[0], data.units[1:], 3, m)
    assert list(group.neighbor_ids) == [10, 20, 40]


def test_knn_set_pool_too_small(grid):
    data = scalar_dataset(np.zeros((3, 1)), [0] * 3, np.zeros(3), grid)
    with pytest.raises(PoolTooSmall):
        knn_set(data.units[0], data.units[1:], 5, MetricParams(np.ones(1)))


def test_knn_predict_is_neighbor_barycenter(grid):
    data = scalar_dataset(np.arange(6.0).reshape(-1, 1), [1] * 6,
                          [0.0, 1.0, 2.0, 10.0, 11.0, 12.0], grid)
    m = MetricParams(np.ones(1))
    pred = knn_predict(data.units[0], data.units[1:], 2, m)
    assert pred.values[0] == pytest.approx((1.0 + 2.0) / 2)


# --- training objective -----------------------------------------------------------

def test_training_loss_hand_computed(grid):
    # 4 units, one arm, k=1, c=0: each unit's nearest neighbor is its
    # horizontal twin, so every leave-self-out prediction errs by exactly
    # the outcome gap within the pair.
    data = scalar_dataset([[0.0], [0.1], [10.0], [10.1]], [0, 0, 0, 0],
                          [1.0, 3.0, 5.0, 9.0], grid)
    m = MetricParams(np.ones(1), c=0.0)
    # residuals: |3-1|=2 for units 0,1 and |9-5|=4 for units 2,3
    expect = np.mean([4.0, 4.0, 16.0, 16.0])
    assert training_loss(m, data, 1) == pytest.approx(expect, rel=1e-12)


def test_training_loss_adds_regularizer(grid):
    data = scalar_dataset([[0.0], [0.1], [10.0], [10.1]], [0] * 4,
                          [1.0, 3.0, 5.0, 9.0], grid)
    base = training_loss(MetricParams(np.ones(1), c=0.0), data, 1)
    reg = training_loss(MetricParams(np.ones(1), c=0.5), data, 1)
    assert reg == pytest.approx(base + 0.5 * 1.0, rel=1e-12)


def test_training_loss_two_arms_sum(grid):
    rng = np.random.default_rng(9)
    data = random_scalar_dataset(rng, 12, d=2, grid=grid)
    m = MetricParams(np.array([1.0, 2.0]), c=0.0)
    # oracle: recompute with per-unit knn_predict within each arm
    total = 0.0
    k = 2
    nw = grid.norm_weights
    for arm in (0, 1):
        arm_units = [u for u in data.units if u.treatment == arm]
        losses = []
        for u in arm_units:
            pool = [v for v in arm_units if v.id != u.id]
            pred = knn_predict(u, pool, k, m)
            resid = pred.values - u.outcome.values
            losses.append(float((resid * resid) @ nw))
        total += np.mean(losses)
    assert training_loss(m, data, k) == pytest.approx(total, rel=1e-10)


def test_training_loss_arm_too_small(grid):
    data = scalar_dataset(np.zeros((4, 1)), [0, 0, 0, 1], np.zeros(4), grid)
    with pytest.raises(ArmTooSmall):
        training_loss(MetricParams(np.ones(1)), data, 2)


# --- optimizer --------------------------------------------------------------------

def make_relevance_dataset(rng, n=60, grid=None):
    """Outcome driven by covariate 0 only; covariate 1 is pure noise."""
    grid = grid or ProbabilityGrid.uniform(25)
    x = rng.uniform(-1, 1, (n, 2))
    y = 5.0 * x[:, 0] + 0.05 * rng.standard_normal(n)
    t = np.tile([0, 1], n // 2)
    return scalar_dataset(x, t, y, grid)


def test_fit_metric_downweights_irrelevant_covariate():
    rng = np.random.default_rng(2)
    data = make_relevance_dataset(rng)
    result = fit_metric(data, FitConfig(k=3, n_starts=2,
                                        budget_per_start=400, seed=0))
    w = result.params.weights
    assert w[0] > 5.0 * w[1]


def test_fit_metric_never_loses_to_ones():
    rng = np.random.default_rng(4)
    data = make_relevance_dataset(rng, n=40)
    config = FitConfig(k=3, n_starts=1, budget_per_start=60, seed=1)
    result = fit_metric(data, config)
    ones_loss = training_loss(MetricParams.ones(2, config.c), data, config.k)
    assert result.best_loss <= ones_loss + 1e-12


def test_fit_metric_deterministic():
    rng = np.random.default_rng(6)
    data = make_relevance_dataset(rng, n=40)
    config = FitConfig(k=3, n_starts=2, budget_per_start=120, seed=7)
    a = fit_metric(data, config)
    b = fit_metric(data, config)
    assert np.array_equal(a.params.weights, b.params.weights)
    assert a.best_loss == b.best_loss


def test_fit_metric_respects_bounds():
    rng = np.random.default_rng(8)
    data = make_relevance_dataset(rng, n=40)
    result = fit_metric(data, FitConfig(k=3, n_starts=2,
                                        budget_per_start=150, w_max=2.0))
    assert np.all(result.params.weights >= 0)
    assert np.all(result.params.weights <= 2.0)
