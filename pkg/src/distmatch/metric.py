"""Learned covariate distance, KNN prediction, and the training objective.

The covariate distance is a nonnegative-weighted sum of squared 2-Wasserstein
distances, one weight per covariate. Weights are learned on a training split
by minimizing leave-self-out KNN prediction error of the observed outcomes,
plus weak Frobenius regularization. The objective is piecewise constant in
the neighbor assignments, so the optimizer is a derivative-free multi-start
simplex search over a box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .data import Dataset, Unit, _id_key
from .errors import ArmTooSmall, PoolTooSmall, SchemaMismatch
from .quantiles import QuantileFunction, barycenter


@dataclass(frozen=True)
class MetricParams:
    """Diagonal metric weights plus regularization strength."""

    weights: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or np.any(w < 0):
            raise ValueError("metric weights must be a nonnegative vector")
        if self.c < 0:
            raise ValueError("regularization strength must be nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def ones(cls, d: int, c: float = 0.0) -> "MetricParams":
        return cls(np.ones(d), c)


@dataclass(frozen=True)
class MatchedGroup:
    """A query's K nearest neighbors under the learned metric."""

    query_id: object
    treatment_arm: int
    neighbor_ids: tuple
    distances: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=np.float64)
        d.setflags(write=False)
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "neighbor_ids", tuple(self.neighbor_ids))

    @property
    def diameter(self) -> float:
        """Mean distance to the matched neighbors."""
        return float(self.distances.mean())


def _per_covariate_sq_w2(A: np.ndarray, B: np.ndarray, nw: np.ndarray) -> np.ndarray:
    """Pairwise squared W2 per covariate: (n,d,Q) x (m,d,Q) -> (n,m,d)."""
    n, d, _ = A.shape
    m = B.shape[0]
    out = np.empty((n, m, d))
    for l in range(d):
        a = A[:, l, :]
        b = B[:, l, :]
        aw = a * nw
        sa = np.einsum("iq,iq->i", aw, a)
        sb = np.einsum("jq,jq->j", b * nw, b)
        out[:, :, l] = sa[:, None] + sb[None, :] - 2.0 * (aw @ b.T)
    np.maximum(out, 0.0, out=out)
    return out


def covariate_distance(m: MetricParams, a: Unit, b: Unit) -> float:
    """Weighted sum of squared per-covariate W2 distances between two units."""
    if len(a.covariates) != len(b.covariates) or len(a.covariates) != m.weights.size:
        raise SchemaMismatch("covariate count differs between units and metric")
    total = 0.0
    for w, fa, fb in zip(m.weights, a.covariates, b.covariates):
        diff = fa.values - fb.values
        total += w * float(np.sum(fa.grid.norm_weights * diff * diff))
    return total


def _pool_arrays(pool):
    units = list(pool.units) if isinstance(pool, Dataset) else list(pool)
    units.sort(key=lambda u: _id_key(u.id))
    cov = np.array([[qf.values for qf in u.covariates] for u in units])
    return units, cov


def knn_set(query: Unit, pool, k: int, m: MetricParams) -> MatchedGroup:
    """The k pool units nearest to the query; ties break to the lower id."""
    units, cov = _pool_arrays(pool)
    if len(units) < k or k < 1:
        raise PoolTooSmall(f"need k={k} units, pool has {len(units)}")
    arms = {u.treatment for u in units}
    if len(arms) != 1:
        raise ValueError("knn pool must have a single treatment arm")
    nw = units[0].covariates[0].grid.norm_weights if units[0].covariates else None
    qcov = np.array([qf.values for qf in query.covariates])[None, :, :]
    dists = _per_covariate_sq_w2(qcov, cov, nw)[0] @ m.weights
    order = np.argsort(dists, kind="stable")[:k]
    return MatchedGroup(
        query_id=query.id,
        treatment_arm=arms.pop(),
        neighbor_ids=[units[i].id for i in order],
        distances=dists[order],
    )


def knn_predict(query: Unit, pool, k: int, m: MetricParams) -> QuantileFunction:
    """Barycenter of the k nearest pool units' outcomes."""
    units, _ = _pool_arrays(pool)
    by_id = {u.id: u for u in units}
    group = knn_set(query, units, k, m)
    return barycenter([by_id[i].outcome for i in group.neighbor_ids])


class TrainingObjective:
    """Cached leave-self-out prediction loss over a training dataset.

    Per-covariate squared distances do not depend on the metric weights, so
    they are computed once; each evaluation is then a weighted reduction plus
    a neighbor sort per arm.
    """

    def __init__(self, train: Dataset, k: int, c: float):
        self.k = int(k)
        self.c = float(c)
        self.d = train.n_covariates
        nw = train.grid.norm_weights
        self._arms = []
        for t in (0, 1):
            idx = train.arm_indices(t)
            if idx.size == 0:
                continue  # an absent arm contributes no prediction term
            if idx.size <= k:
                raise ArmTooSmall(
                    f"arm {t} has {idx.size} units; leave-self-out k={k} needs more"
                )
            cov = train.covariate_values[idx]
            y = train.outcome_values[idx]
            cache = _per_covariate_sq_w2(cov, cov, nw)
            self._arms.append((cache, y))
        self._nw = nw
        self.n_evals = 0

    def __call__(self, weights) -> float:
        self.n_evals += 1
        w = np.asarray(weights, dtype=np.float64)
        loss = self.c * math.sqrt(float(w @ w))
        for cache, y in self._arms:
            dmat = cache @ w
            np.fill_diagonal(dmat, np.inf)
            nbr = np.argsort(dmat, axis=1, kind="stable")[:, : self.k]
            preds = y[nbr].mean(axis=1)
            resid = preds - y
            loss += float(np.mean((resid * resid) @ self._nw))
        return loss


def training_loss(m: MetricParams, train: Dataset, k: int) -> float:
    """Objective value at the given metric parameters."""
    return TrainingObjective(train, k, m.c)(m.weights)


@dataclass(frozen=True)
class FitConfig:
    """Settings for the metric optimizer; mirrored by CLI flags."""

    k: int = 10
    c: float = 0.001
    w_max: float = 100.0
    n_starts: int = 5
    budget_per_start: int | None = None  # None -> 500 * d
    seed: int = 0
    xatol: float = 1e-3
    fatol: float = 1e-9

    def budget(self, d: int) -> int:
        return self.budget_per_start if self.budget_per_start else 500 * d


@dataclass(frozen=True)
class FitResult:
    """Learned metric plus optimizer diagnostics."""

    params: MetricParams
    best_loss: float
    start_losses: tuple
    n_evals: int
    budget_exhausted: bool


def fit_metric(train: Dataset, config: FitConfig = FitConfig()) -> FitResult:
    """Multi-start simplex search for the metric weights over [0, w_max]^d.

    The first start is all-ones; the rest are seeded-random. The returned
    weights never lose to the all-ones initial point. If every start stops
    only because its evaluation budget ran out, ``budget_exhausted`` is set
    and the best-so-far point is returned.
    """
    d = train.n_covariates
    objective = TrainingObjective(train, config.k, config.c)
    rng = np.random.default_rng(config.seed)
    starts = [np.ones(d)]
    starts += [rng.uniform(0.0, 2.0, d) for _ in range(config.n_starts - 1)]
    bounds = [(0.0, config.w_max)] * d
    budget = config.budget(d)

    best_x, best_f = starts[0], objective(starts[0])
    start_losses = []
    exhausted = True
    for x0 in starts:
        # The loss is piecewise constant in the weights, so the default
        # simplex (5% coordinate bumps) can sit entirely on one flat piece.
        # Start from a simplex wide enough to straddle several pieces.
        simplex = np.vstack([x0] + [x0 + 0.75 * basis
                                    for basis in np.eye(d)])
        simplex = np.clip(simplex, 0.0, config.w_max)
        res = minimize(
            objective, x0, method="Nelder-Mead", bounds=bounds,
            options={
                "maxfev": budget,
                "xatol": config.xatol,
                "fatol": config.fatol,
                "initial_simplex": simplex,
            },
        )
        start_losses.append(float(res.fun))
        if res.success:
            exhausted = False
        if res.fun < best_f:
            best_f, best_x = float(res.fun), np.clip(res.x, 0.0, config.w_max)

    return FitResult(
        params=MetricParams(best_x, config.c),
        best_loss=best_f,
        start_losses=tuple(start_losses),
        n_evals=objective.n_evals,
        budget_exhausted=exhausted,
    )
