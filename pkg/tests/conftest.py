import numpy as np
import pytest

from distmatch import (
    CovariateField,
    Dataset,
    ProbabilityGrid,
    SCALAR,
    Unit,
    degenerate,
)


@pytest.fixture
def grid():
    return ProbabilityGrid.uniform(99)


def scalar_dataset(x, t, y, grid, ids=None):
    """Dataset of point-mass covariates/outcomes from plain arrays.

    ``x`` is (n, d); ``t`` and ``y`` are length n.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    ids = range(len(x)) if ids is None else ids
    units = [
        Unit(id=uid, treatment=int(t_i),
             covariates=[degenerate(v, grid) for v in row],
             outcome=degenerate(float(y_i), grid))
        for uid, row, t_i, y_i in zip(ids, x, t, y)
    ]
    schema = [CovariateField(f"x{l}", SCALAR) for l in range(x.shape[1])]
    return Dataset(units, grid, schema)


def random_scalar_dataset(rng, n, d=2, grid=None, ensure_arms=True):
    grid = grid or ProbabilityGrid.uniform(99)
    while True:
        t = rng.integers(0, 2, n)
        if not ensure_arms or (t.sum() > 0 and t.sum() < n):
            break
    x = rng.normal(size=(n, d))
    y = rng.normal(size=n)
    return scalar_dataset(x, t, y, grid)
