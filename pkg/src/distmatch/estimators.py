"""Matching-based effect estimation on the estimation split.

CATE curves contrast treated and control conditional barycenters built from
K nearest neighbors under the learned metric; the ATE averages individual
contrasts in which the observed arm uses the unit's own outcome and the
counterfactual arm uses the matched barycenter. The ATE is also computed in
its algebraically equivalent weighted-sum form as an internal cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Unit
from .errors import InternalIdentityViolation, PoolTooSmall
from .metric import MetricParams, _per_covariate_sq_w2
from .quantiles import ProbabilityGrid, QuantileFunction, barycenter

ATE_IDENTITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class EffectCurve:
    """A treatment-effect curve over the probability grid."""

    grid: ProbabilityGrid
    tau: np.ndarray
    n_used: int
    variance: np.ndarray | None = None
    ci_lo: np.ndarray | None = None
    ci_hi: np.ndarray | None = None

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=np.float64)
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        if self.ci_lo is not None and self.ci_hi is not None:
            if np.any(self.ci_lo > tau + 1e-12) or np.any(self.ci_hi < tau - 1e-12):
                raise ValueError("confidence band does not bracket the estimate")


def full_distance_matrix(est: Dataset, m: MetricParams) -> np.ndarray:
    """All pairwise learned-metric distances within the estimation set."""
    cov = est.covariate_values
    nw = est.grid.norm_weights
    n, d, _ = cov.shape
    out = np.zeros((n, n))
    for l in range(d):
        w = m.weights[l]
        if w == 0.0:
            continue
        a = cov[:, l, :]
        aw = a * nw
        s = np.einsum("iq,iq->i", aw, a)
        g = s[:, None] + s[None, :] - 2.0 * (aw @ a.T)
        np.maximum(g, 0.0, out=g)
        out += w * g
    return out


def cross_arm_neighbors(est: Dataset, k: int, m: MetricParams, dmat=None):
    """K nearest opposite-arm neighbors for every estimation unit.

    Returns ``(nbr_pos, nbr_dist)`` of shape (n, k): positions into
    ``est.units`` and sorted distances. Ties break toward the lower unit id.
    """
    if dmat is None:
        dmat = full_distance_matrix(est, m)
    n = len(est)
    nbr_pos = np.empty((n, k), dtype=np.int64)
    nbr_dist = np.empty((n, k))
    for t in (0, 1):
        queries = np.flatnonzero(est.treatments == t)
        pool = est.arm_indices(1 - t)
        if pool.size < k:
            raise PoolTooSmall(f"arm {1 - t} has {pool.size} units, need k={k}")
        if queries.size == 0:
            continue
        sub = dmat[np.ix_(queries, pool)]
        order = np.argsort(sub, axis=1, kind="stable")[:, :k]
        nbr_pos[queries] = pool[order]
        nbr_dist[queries] = np.take_along_axis(sub, order, axis=1)
    return nbr_pos, nbr_dist


def match_counts_from_neighbors(nbr_pos: np.ndarray, n: int) -> np.ndarray:
    """How often each unit appears in another unit's matched set."""
    return np.bincount(nbr_pos.ravel(), minlength=n).astype(np.int64)


def _same_arm_pool(est, query, arm):
    pool = [u for u in est.units if u.treatment == arm and u.id != query.id]
    return pool


def conditional_barycenter(query: Unit, est: Dataset, arm: int, k: int,
                           m: MetricParams) -> QuantileFunction:
    """Barycenter of the K nearest same-arm outcomes; self-matches excluded."""
    pool = _same_arm_pool(est, query, arm)
    if len(pool) < k:
        raise PoolTooSmall(f"arm {arm} offers {len(pool)} candidates, need k={k}")
    from .metric import knn_set

    group = knn_set(query, pool, k, m)
    by_id = {u.id: u for u in pool}
    return barycenter([by_id[i].outcome for i in group.neighbor_ids])


def estimate_cate(query: Unit, est: Dataset, k: int, m: MetricParams) -> EffectCurve:
    """CATE curve at the query's covariates."""
    b1 = conditional_barycenter(query, est, 1, k, m)
    b0 = conditional_barycenter(query, est, 0, k, m)
    return EffectCurve(grid=est.grid, tau=b1.values - b0.values, n_used=2 * k)


def estimate_cate_batch(est: Dataset, k: int, m: MetricParams,
                        dmat=None) -> np.ndarray:
    """CATE curves for every estimation unit at once: (n, Q) array."""
    if dmat is None:
        dmat = full_distance_matrix(est, m)
    n = len(est)
    y = est.outcome_values
    bary = np.empty((2, n, y.shape[1]))
    for arm in (0, 1):
        pool = est.arm_indices(arm)
        in_arm = est.treatments == arm
        if pool.size - (1 if in_arm.any() else 0) < k:
            raise PoolTooSmall(f"arm {arm} too small for k={k} with self-exclusion")
        sub = dmat[:, pool].copy()
        # exclude each unit from its own same-arm pool
        rows = np.flatnonzero(in_arm)
        col_of = {p: c for c, p in enumerate(pool)}
        for r in rows:
            sub[r, col_of[r]] = np.inf
        order = np.argsort(sub, axis=1, kind="stable")[:, :k]
        bary[arm] = y[pool[order]].mean(axis=1)
    return bary[1] - bary[0]


def ite_curves(est: Dataset, k: int, m: MetricParams, dmat=None):
    """Per-unit effect contrasts (n, Q): observed arm vs matched barycenter."""
    nbr_pos, _ = cross_arm_neighbors(est, k, m, dmat=dmat)
    y = est.outcome_values
    counterfactual = y[nbr_pos].mean(axis=1)
    sign = (2 * est.treatments - 1)[:, None]
    return sign * (y - counterfactual), nbr_pos


def ite_contrast(unit: Unit, est: Dataset, k: int, m: MetricParams) -> EffectCurve:
    """Individual effect curve: own outcome against the counterfactual match."""
    pool = [u for u in est.units if u.treatment == 1 - unit.treatment]
    if len(pool) < k:
        raise PoolTooSmall(
            f"arm {1 - unit.treatment} offers {len(pool)} candidates, need k={k}"
        )
    from .metric import knn_predict

    counterfactual = knn_predict(unit, pool, k, m)
    sign = 2 * unit.treatment - 1
    tau = sign * (unit.outcome.values - counterfactual.values)
    return EffectCurve(grid=est.grid, tau=tau, n_used=k + 1)


def average_ite(est: Dataset, k: int, m: MetricParams, positions=None,
                dmat=None) -> EffectCurve:
    """Mean of per-unit contrasts over a subset of estimation units."""
    curves, _ = ite_curves(est, k, m, dmat=dmat)
    if positions is not None:
        curves = curves[np.asarray(positions, dtype=np.int64)]
    return EffectCurve(grid=est.grid, tau=curves.mean(axis=0), n_used=curves.shape[0])


def estimate_ate(est: Dataset, k: int, m: MetricParams, dmat=None) -> EffectCurve:
    """ATE curve; the averaging and weighted-sum forms must agree."""
    curves, nbr_pos = ite_curves(est, k, m, dmat=dmat)
    tau_mean = curves.mean(axis=0)

    n = len(est)
    counts = match_counts_from_neighbors(nbr_pos, n)
    coef = (2 * est.treatments - 1) * (1.0 + counts / k) / n
    tau_weighted = coef @ est.outcome_values

    gap = float(np.max(np.abs(tau_mean - tau_weighted)))
    if gap > ATE_IDENTITY_TOL:
        raise InternalIdentityViolation(
            f"ATE forms disagree by {gap:.3g} > {ATE_IDENTITY_TOL}"
        )
    return EffectCurve(grid=est.grid, tau=tau_mean, n_used=n)
