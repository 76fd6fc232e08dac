"""Units, datasets, and the covariate schema.

Every covariate is stored as a quantile function on the dataset's shared
grid; scalars and one-hot categorical levels are degenerate (point-mass)
distributions, so downstream code never branches on covariate kind except
for presentation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SchemaMismatch
from .quantiles import ProbabilityGrid, QuantileFunction

SCALAR = "scalar"
CATEGORY = "categorical-level"
DISTRIBUTION = "distribution"
_KINDS = (SCALAR, CATEGORY, DISTRIBUTION)


@dataclass(frozen=True)
class CovariateField:
    """One encoded covariate column: a name and its kind."""

    name: str
    kind: str = SCALAR

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown covariate kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Unit:
    """One observation: treatment flag, covariates, and outcome."""

    id: object
    treatment: int
    covariates: tuple
    outcome: QuantileFunction

    def __post_init__(self):
        if self.treatment not in (0, 1):
            raise ValueError(f"treatment must be 0 or 1, got {self.treatment}")
        object.__setattr__(self, "covariates", tuple(self.covariates))


class Dataset:
    """Immutable collection of units sharing a grid and covariate schema.

    Dense views of the covariates, outcomes, and treatments are cached on
    first access; all heavy kernels work on those arrays.
    """

    def __init__(self, units: Sequence[Unit], grid: ProbabilityGrid,
                 schema: Sequence[CovariateField]):
        units = tuple(units)
        schema = tuple(
            f if isinstance(f, CovariateField) else CovariateField(*f)
            for f in schema
        )
        ids = [u.id for u in units]
        if len(set(ids)) != len(ids):
            raise ValueError("unit ids must be unique")
        d = len(schema)
        for u in units:
            if len(u.covariates) != d:
                raise SchemaMismatch(
                    f"unit {u.id} has {len(u.covariates)} covariates, schema has {d}"
                )
            for qf in u.covariates + (u.outcome,):
                if not grid.same_as(qf.grid):
                    raise SchemaMismatch(
                        f"unit {u.id} carries a quantile function on a foreign grid"
                    )
        self.units = units
        self.grid = grid
        self.schema = schema
        self._cache = {}

    def __len__(self):
        return len(self.units)

    @property
    def n_covariates(self):
        return len(self.schema)

    def _dense(self, key, build):
        if key not in self._cache:
            a = build()
            a.setflags(write=False)
            self._cache[key] = a
        return self._cache[key]

    @property
    def covariate_values(self) -> np.ndarray:
        """(n, d, Q) array of covariate quantile values."""
        return self._dense("cov", lambda: np.array(
            [[qf.values for qf in u.covariates] for u in self.units]
        ))

    @property
    def outcome_values(self) -> np.ndarray:
        """(n, Q) array of outcome quantile values."""
        return self._dense("out", lambda: np.array(
            [u.outcome.values for u in self.units]
        ))

    @property
    def treatments(self) -> np.ndarray:
        return self._dense("trt", lambda: np.array(
            [u.treatment for u in self.units], dtype=np.int64
        ))

    @property
    def ids(self):
        return [u.id for u in self.units]

    def arm_indices(self, t: int) -> np.ndarray:
        """Positions of units with treatment ``t``, ordered by unit id."""
        idx = np.flatnonzero(self.treatments == t)
        order = sorted(range(idx.size), key=lambda r: _id_key(self.units[idx[r]].id))
        return idx[np.asarray(order, dtype=np.int64)]

    def index_of(self, unit_id) -> int:
        if "idmap" not in self._cache:
            self._cache["idmap"] = {u.id: i for i, u in enumerate(self.units)}
        return self._cache["idmap"][unit_id]

    def subset(self, positions) -> "Dataset":
        return Dataset([self.units[i] for i in positions], self.grid, self.schema)

    def split(self, ratio: float, seed: int):
        """Honest (train, estimation) split with a seeded shuffle."""
        if not 0.0 < ratio < 1.0:
            raise ValueError("split ratio must be in (0,1)")
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(self))
        cut = int(round(ratio * len(self)))
        return self.subset(np.sort(perm[:cut])), self.subset(np.sort(perm[cut:]))

    def schema_matches(self, other: "Dataset") -> bool:
        return self.schema == other.schema and self.grid.same_as(other.grid)


def _id_key(unit_id):
    # Mixed id types still need a total order for deterministic tie-breaking.
    return (str(type(unit_id).__name__), unit_id)
