"""Positivity diagnostics from cross-arm nearest-neighbor diameters.

A unit far from every opposite-arm unit sits in a region where the data
cannot support a counterfactual. Diameters above the usual IQR outlier
threshold are flagged, and matched groups can be rendered for inspection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DISTRIBUTION, Dataset, Unit
from .errors import LengthMismatch, PoolTooSmall, TooFewUnits
from .estimators import cross_arm_neighbors, full_distance_matrix
from .metric import MetricParams, knn_set


@dataclass(frozen=True, eq=False)
class OverlapReport:
    """Per-unit diameters with IQR-based positivity flags."""

    ids: tuple
    diameters: np.ndarray
    flagged: np.ndarray
    d_upper: float
    q25: float
    q75: float

    @property
    def flagged_fraction(self) -> float:
        return float(self.flagged.mean())

    def rows(self):
        for uid, diam, flag in zip(self.ids, self.diameters, self.flagged):
            yield uid, float(diam), bool(flag)


def cross_arm_diameter(unit: Unit, est: Dataset, k: int, m: MetricParams) -> float:
    """Mean distance from the unit to its K nearest opposite-arm units."""
    pool = [u for u in est.units if u.treatment == 1 - unit.treatment]
    if len(pool) < k:
        raise PoolTooSmall(
            f"opposite arm offers {len(pool)} candidates, need k={k}"
        )
    return knn_set(unit, pool, k, m).diameter


def diameters(est: Dataset, k: int, m: MetricParams, dmat=None) -> np.ndarray:
    """Cross-arm diameters for every estimation unit."""
    _, nbr_dist = cross_arm_neighbors(est, k, m, dmat=dmat)
    return nbr_dist.mean(axis=1)


def flag_positivity(diams, ids=None) -> OverlapReport:
    """IQR outlier rule: flag diameters strictly above q75 + 1.5 * IQR."""
    diams = np.asarray(diams, dtype=np.float64)
    if diams.size < 4:
        raise TooFewUnits(f"need at least 4 diameters, got {diams.size}")
    q25, q75 = np.quantile(diams, [0.25, 0.75])  # linear interpolation
    d_upper = q75 + 1.5 * (q75 - q25)
    flags = diams > d_upper
    if ids is None:
        ids = tuple(range(diams.size))
    elif len(ids) != diams.size:
        raise LengthMismatch("ids and diameters differ in length")
    return OverlapReport(
        ids=tuple(ids), diameters=diams, flagged=flags,
        d_upper=float(d_upper), q25=float(q25), q75=float(q75),
    )


def assess_overlap(est: Dataset, k: int, m: MetricParams, dmat=None) -> OverlapReport:
    """Diameters plus flags for the whole estimation set."""
    if dmat is None:
        dmat = full_distance_matrix(est, m)
    return flag_positivity(diameters(est, k, m, dmat=dmat), ids=est.ids)


def classify_accuracy(flags, truth) -> float:
    """Fraction of agreement between predicted and true positivity labels."""
    flags = np.asarray(flags, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if flags.shape != truth.shape:
        raise LengthMismatch("flags and truth differ in length")
    return float(np.mean(flags == truth))


@dataclass(frozen=True)
class MatchedGroupTable:
    """Query-plus-neighbors table for human inspection."""

    header: tuple
    rows: tuple  # first row is the query

    def to_text(self) -> str:
        cells = [list(self.header)] + [[str(c) for c in r] for r in self.rows]
        widths = [max(len(row[j]) for row in cells) for j in range(len(self.header))]
        lines = []
        for i, row in enumerate(cells):
            lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)

    def to_csv_rows(self):
        yield self.header
        yield from self.rows


def _format_covariate(field, qf):
    if field.kind == DISTRIBUTION:
        v = qf.values
        return f"[{v.min():.4g}/{np.median(v):.4g}/{v.max():.4g}]"
    return f"{qf.values[0]:.6g}"


def matched_group_report(unit: Unit, est: Dataset, k: int,
                         m: MetricParams) -> MatchedGroupTable:
    """Render the query and its K nearest opposite-arm neighbors."""
    pool = [u for u in est.units if u.treatment == 1 - unit.treatment]
    if len(pool) < k:
        raise PoolTooSmall(
            f"opposite arm offers {len(pool)} candidates, need k={k}"
        )
    group = knn_set(unit, pool, k, m)
    by_id = {u.id: u for u in pool}
    header = ("id",) + tuple(f.name for f in est.schema) + ("treatment", "distance")

    def row(u, dist):
        covs = tuple(
            _format_covariate(f, qf) for f, qf in zip(est.schema, u.covariates)
        )
        return (u.id,) + covs + (u.treatment, dist)

    rows = [row(unit, "—")]
    for nid, dist in zip(group.neighbor_ids, group.distances):
        rows.append(row(by_id[nid], f"{dist:.6g}"))
    return MatchedGroupTable(header=header, rows=tuple(rows))
