"""Line-delimited JSON ingestion and serialization for datasets.

One unit per line. Each record carries an ``id``, a ``treatment`` in {0,1},
an ``outcome``, and a ``covariates`` mapping. Outcomes and distributional
covariates are either raw draws (``{"samples": [...]}``) rendered onto the
grid as empirical quantile functions, or precomputed grid-length vectors
(``{"quantiles": [...]}``). Scalar covariates are bare numbers; categorical
covariates are bare strings, expanded one-hot into point-mass indicator
covariates so the metric can weight each level separately.

Serialization writes the quantile representation back out, so precomputed-
quantile inputs round-trip losslessly.
"""

from __future__ import annotations

import json

import numpy as np

from .data import CATEGORY, DISTRIBUTION, SCALAR, CovariateField, Dataset, Unit
from .errors import GridMismatch, ParseError, SchemaError
from .quantiles import (
    ProbabilityGrid,
    QuantileFunction,
    degenerate,
    empirical_quantile_function,
    make_quantile_function,
)

_REQUIRED = ("id", "treatment", "covariates", "outcome")


def _parse_functional(value, grid, line, what):
    """Raw samples or a precomputed quantile vector -> QuantileFunction."""
    if not isinstance(value, dict):
        raise ParseError(f"{what} must be an object with 'samples' or "
                         f"'quantiles'", line)
    if ("samples" in value) == ("quantiles" in value):
        raise ParseError(f"{what} needs exactly one of 'samples'/'quantiles'",
                         line)
    if "samples" in value:
        samples = np.asarray(value["samples"], dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ParseError(f"{what} 'samples' must be a nonempty array",
                             line)
        return empirical_quantile_function(samples, grid)
    vec = np.asarray(value["quantiles"], dtype=np.float64)
    if vec.ndim != 1:
        raise ParseError(f"{what} 'quantiles' must be a flat array", line)
    if vec.size != len(grid):
        raise GridMismatch(
            f"line {line}: {what} has {vec.size} quantiles, grid wants "
            f"{len(grid)}"
        )
    support = value.get("support")
    if support is not None:
        support = (float(support[0]), float(support[1]))
    return make_quantile_function(vec, grid, support=support)


def _classify(name, value, line):
    if isinstance(value, bool):
        raise ParseError(f"covariate {name!r} is a boolean; use 0/1 or a "
                         f"string label", line)
    if isinstance(value, (int, float)):
        return SCALAR
    if isinstance(value, str):
        return CATEGORY
    if isinstance(value, dict):
        return DISTRIBUTION
    raise ParseError(f"covariate {name!r} has unsupported type "
                     f"{type(value).__name__}", line)


def read_units(path, grid: ProbabilityGrid) -> Dataset:
    """Parse a JSON-lines file into a Dataset on the given grid."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no) from exc
            for key in _REQUIRED:
                if key not in rec:
                    raise ParseError(f"missing field {key!r}", line_no)
            if rec["treatment"] not in (0, 1):
                raise ParseError("treatment must be 0 or 1", line_no)
            if not isinstance(rec["covariates"], dict):
                raise ParseError("'covariates' must be an object", line_no)
            records.append((line_no, rec))
    if not records:
        raise ParseError("file contains no records", 0)

    first_line, first = records[0]
    kinds = {name: _classify(name, v, first_line)
             for name, v in first["covariates"].items()}
    names = list(kinds)

    levels = {}  # categorical name -> sorted observed levels
    for line_no, rec in records:
        got = set(rec["covariates"])
        if got != set(names):
            missing = sorted(set(names) - got)
            extra = sorted(got - set(names))
            raise SchemaError(
                f"line {line_no}: covariate names differ from line "
                f"{first_line} (missing {missing}, unexpected {extra})"
            )
        for name in names:
            v = rec["covariates"][name]
            if _classify(name, v, line_no) != kinds[name]:
                raise SchemaError(
                    f"line {line_no}: covariate {name!r} changed type"
                )
            if kinds[name] == CATEGORY:
                levels.setdefault(name, set()).add(v)

    schema = []
    for name in names:
        if kinds[name] == CATEGORY:
            for level in sorted(levels[name]):
                schema.append(CovariateField(f"{name}={level}", CATEGORY))
        else:
            schema.append(CovariateField(name, kinds[name]))

    units = []
    for line_no, rec in records:
        covs = []
        for name in names:
            v = rec["covariates"][name]
            if kinds[name] == SCALAR:
                covs.append(degenerate(float(v), grid))
            elif kinds[name] == CATEGORY:
                for level in sorted(levels[name]):
                    covs.append(degenerate(1.0 if v == level else 0.0, grid))
            else:
                covs.append(_parse_functional(v, grid, line_no,
                                              f"covariate {name!r}"))
        outcome = _parse_functional(rec["outcome"], grid, line_no, "outcome")
        units.append(Unit(id=rec["id"], treatment=int(rec["treatment"]),
                          covariates=covs, outcome=outcome))
    return Dataset(units, grid, schema)


def write_units(path, data: Dataset) -> None:
    """Serialize a Dataset as JSON lines in the precomputed-quantile form."""
    def functional(qf: QuantileFunction):
        return {"quantiles": qf.values.tolist(),
                "support": [qf.support_lo, qf.support_hi]}

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for unit in data.units:
            covs = {}
            for field, qf in zip(data.schema, unit.covariates):
                if field.kind == DISTRIBUTION:
                    covs[field.name] = functional(qf)
                else:
                    covs[field.name] = float(qf.values[0])
            rec = {"id": unit.id, "treatment": unit.treatment,
                   "covariates": covs, "outcome": functional(unit.outcome)}
            fh.write(json.dumps(rec) + "\n")
