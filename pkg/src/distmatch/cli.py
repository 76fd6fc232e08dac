"""Batch command-line front end: fit / estimate / diagnose / simulate.

Every run writes its artifacts plus a ``manifest.json`` capturing the parsed
configuration, package and dependency versions, and SHA-256 digests of the
input files, so a run can be reproduced byte-for-byte from the manifest.
All files are written atomically (temp file + rename) with UTF-8, LF
endings, and '.'-decimal CSV formatting.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io as _stdio
import json
import os
import platform
import re
import sys
import tempfile

import numpy as np
import scipy

from . import __version__
from .data import CATEGORY, SCALAR, Dataset
from .errors import BadSpec, DistmatchError, SchemaError
from .estimators import average_ite, full_distance_matrix
from .inference import QuantileLinearMeans, confidence_band
from .io import read_units
from .metric import FitConfig, MetricParams, fit_metric, training_loss
from .overlap import assess_overlap, matched_group_report
from .quantiles import ProbabilityGrid
from .simulation import SimulationSpec, run_benchmark


def _atomic_write(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows) -> str:
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir, args, inputs) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "config": config,
        "versions": {
            "distmatch": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "inputs": {os.path.basename(p): _digest(p) for p in inputs},
    }
    _atomic_write(os.path.join(outdir, "manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _grid(args) -> ProbabilityGrid:
    grid = ProbabilityGrid.uniform(args.grid_size)
    if args.trim:
        grid = grid.trim(args.trim[0], args.trim[1])
    return grid


def _load_weights(path) -> MetricParams:
    with open(path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    return MetricParams(np.asarray(blob["weights"], dtype=np.float64),
                        float(blob.get("c", 0.0)))


_FILTER = re.compile(
    r"^\s*([A-Za-z_][\w=.-]*)\s*(<=|>=|==|!=|<|>)\s*(-?\d+(?:\.\d+)?)\s*$"
)
_OPS = {
    "<=": np.less_equal, ">=": np.greater_equal, "<": np.less,
    ">": np.greater, "==": np.equal, "!=": np.not_equal,
}


def subgroup_positions(data: Dataset, expression: str) -> np.ndarray:
    """Positions of units matching e.g. ``age > 55`` on a scalar covariate."""
    match = _FILTER.match(expression)
    if not match:
        raise BadSpec(f"cannot parse filter {expression!r}; expected "
                      f"'<name> <op> <number>'")
    name, op, rhs = match.groups()
    for l, field in enumerate(data.schema):
        if field.name == name:
            if field.kind not in (SCALAR, CATEGORY):
                raise SchemaError(f"covariate {name!r} is not scalar")
            values = data.covariate_values[:, l, 0]
            return np.flatnonzero(_OPS[op](values, float(rhs)))
    raise SchemaError(f"no covariate named {name!r}")


def cmd_fit(args) -> int:
    grid = _grid(args)
    data = read_units(args.input, grid)
    config = FitConfig(k=args.k, c=args.c, n_starts=args.starts,
                       budget_per_start=args.budget, seed=args.seed)
    result = fit_metric(data, config)
    os.makedirs(args.out, exist_ok=True)
    _atomic_write(
        os.path.join(args.out, "weights.json"),
        json.dumps({
            "weights": result.params.weights.tolist(),
            "c": result.params.c,
            "covariates": [f.name for f in data.schema],
            "best_loss": result.best_loss,
            "n_evals": result.n_evals,
            "budget_exhausted": result.budget_exhausted,
        }, indent=2) + "\n",
    )
    trace = [("start", "loss")]
    trace += [(i, loss) for i, loss in enumerate(result.start_losses)]
    _atomic_write(os.path.join(args.out, "loss_trace.csv"), _csv_text(trace))
    _write_manifest(args.out, args, [args.input])
    print(f"fit: best_loss={result.best_loss:.6g} "
          f"baseline_loss={training_loss(MetricParams.ones(len(data.schema), args.c), data, args.k):.6g}")
    return 0


def cmd_estimate(args) -> int:
    grid = _grid(args)
    data = read_units(args.input, grid)
    m = (_load_weights(args.weights) if args.weights
         else MetricParams.ones(data.n_covariates))
    os.makedirs(args.out, exist_ok=True)
    dmat = full_distance_matrix(data, m)
    mu = (QuantileLinearMeans(ridge="cv", degree=2).fit(data)
          if args.bias_correct else None)
    report = confidence_band(
        data, args.k, m, level=args.level, j=args.j,
        bias_correct=args.bias_correct, mu_model=mu, dmat=dmat,
    )
    _atomic_write(os.path.join(args.out, "ate.csv"),
                  _csv_text(report.csv_rows()))
    for expression in args.subgroup:
        positions = subgroup_positions(data, expression)
        if positions.size == 0:
            raise BadSpec(f"filter {expression!r} selects no units")
        curve = average_ite(data, args.k, m, positions=positions, dmat=dmat)
        slug = re.sub(r"\W+", "_", expression).strip("_")
        rows = [("q", "tau")]
        rows += list(zip(grid.probs.tolist(), curve.tau.tolist()))
        _atomic_write(os.path.join(args.out, f"cate_{slug}.csv"),
                      _csv_text(rows))
    inputs = [args.input] + ([args.weights] if args.weights else [])
    _write_manifest(args.out, args, inputs)
    print(f"estimate: n={len(data)} level={args.level} "
          f"subgroups={len(args.subgroup)}")
    return 0


def cmd_diagnose(args) -> int:
    grid = _grid(args)
    data = read_units(args.input, grid)
    m = (_load_weights(args.weights) if args.weights
         else MetricParams.ones(data.n_covariates))
    os.makedirs(args.out, exist_ok=True)
    report = assess_overlap(data, args.k, m)
    rows = [("id", "diameter", "flagged")]
    rows += [(uid, d, int(f)) for uid, d, f
             in zip(report.ids, report.diameters, report.flagged)]
    _atomic_write(os.path.join(args.out, "overlap.csv"), _csv_text(rows))
    chunks = [
        f"n={len(data)} flagged={int(report.flagged.sum())} "
        f"d_upper={report.d_upper:.6g} q25={report.q25:.6g} "
        f"q75={report.q75:.6g}"
    ]
    for uid, flagged in zip(report.ids, report.flagged):
        if flagged:
            unit = data.units[data.index_of(uid)]
            table = matched_group_report(unit, data, args.k, m)
            chunks.append("")
            chunks.append(table.to_text())
    _atomic_write(os.path.join(args.out, "flagged_groups.txt"),
                  "\n".join(chunks) + "\n")
    inputs = [args.input] + ([args.weights] if args.weights else [])
    _write_manifest(args.out, args, inputs)
    print(f"diagnose: flagged {int(report.flagged.sum())} of {len(data)}")
    return 0


def cmd_simulate(args) -> int:
    optimizer = FitConfig(k=args.k, c=args.c, n_starts=args.starts,
                          budget_per_start=args.budget, seed=args.seed)
    spec = SimulationSpec(dgp=args.dgp, n=args.n, seed=args.seed,
                          grid=_grid(args), k=args.k, optimizer=optimizer)
    result = run_benchmark(args.kind, spec, args.replicates,
                           diag_k=args.diag_k)
    os.makedirs(args.out, exist_ok=True)
    _atomic_write(os.path.join(args.out, "records.csv"),
                  _csv_text(result.csv_rows()))
    _atomic_write(os.path.join(args.out, "summary.txt"),
                  result.summary_text() + "\n")
    _write_manifest(args.out, args, [])
    print(result.summary_text())
    return 0


def _add_common(sub, weights_flag=True):
    sub.add_argument("--grid-size", type=int, default=99,
                     help="number of interior probability levels")
    sub.add_argument("--trim", type=float, nargs=2, metavar=("LO", "HI"),
                     default=None,
                     help="restrict the grid to [LO, HI], e.g. 0.025 0.975")
    sub.add_argument("--k", type=int, default=10,
                     help="nearest neighbors per matched group")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", required=True, help="output directory")
    if weights_flag:
        sub.add_argument("--weights", default=None,
                         help="weights.json from a fit run (default: ones)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distmatch",
        description="Matching-based causal inference for distributional data",
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    fit = commands.add_parser("fit", help="learn metric weights")
    fit.add_argument("--input", required=True, help="JSON-lines training set")
    fit.add_argument("--c", type=float, default=0.001)
    fit.add_argument("--starts", type=int, default=5)
    fit.add_argument("--budget", type=int, default=None,
                     help="objective evaluations per start (default 500*d)")
    _add_common(fit, weights_flag=False)
    fit.set_defaults(func=cmd_fit)

    est = commands.add_parser("estimate", help="ATE band and subgroup CATEs")
    est.add_argument("--input", required=True, help="JSON-lines estimation set")
    est.add_argument("--level", type=float, default=0.95)
    est.add_argument("--j", type=int, default=2,
                     help="same-arm neighbors for the variance proxy")
    est.add_argument("--bias-correct", action="store_true")
    est.add_argument("--subgroup", action="append", default=[],
                     metavar="EXPR", help="scalar filter, e.g. 'age > 55'")
    _add_common(est)
    est.set_defaults(func=cmd_estimate)

    diag = commands.add_parser("diagnose", help="overlap diagnostics")
    diag.add_argument("--input", required=True)
    _add_common(diag)
    diag.set_defaults(func=cmd_diagnose)

    sim = commands.add_parser("simulate", help="run a benchmark")
    sim.add_argument("--kind", required=True,
                     choices=("cate", "positivity", "coverage",
                              "k_sensitivity"))
    sim.add_argument("--dgp", required=True)
    sim.add_argument("--n", type=int, default=500)
    sim.add_argument("--replicates", type=int, default=20)
    sim.add_argument("--c", type=float, default=0.001)
    sim.add_argument("--starts", type=int, default=2)
    sim.add_argument("--budget", type=int, default=None)
    sim.add_argument("--diag-k", type=int, default=5,
                     help="neighbors for the overlap diagnostic")
    _add_common(sim, weights_flag=False)
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DistmatchError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: OSError: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
