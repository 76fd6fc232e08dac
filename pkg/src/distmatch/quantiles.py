"""Quantile-function data model and 1-D optimal-transport kernels.

Distributions are represented by their quantile functions discretized on a
shared probability grid. In one dimension this turns Wasserstein geometry
into weighted vector arithmetic: distances are weighted L^p norms between
quantile vectors and barycenters are pointwise means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from .errors import (
    EmptyBatch,
    EmptySet,
    GridMismatch,
    LengthMismatch,
    NonMonotone,
    NonPositiveSigma,
    SupportViolation,
)

DEFAULT_TOL_MONO = 1e-9


def _readonly(a):
    a = np.asarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ProbabilityGrid:
    """Ordered probabilities in (0,1) with per-point integration weights.

    ``weights`` are left-Riemann step sizes (the last point repeats the final
    step). ``norm_weights`` rescales them to sum to one; all transport kernels
    integrate against the normalized weights so that point masses reduce
    exactly to scalar arithmetic regardless of how much of (0,1) the grid
    covers.
    """

    probs: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        probs = _readonly(self.probs)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("grid needs a nonempty 1-D probability vector")
        if np.any(probs <= 0.0) or np.any(probs >= 1.0):
            raise ValueError("grid probabilities must lie strictly in (0,1)")
        if probs.size > 1 and np.any(np.diff(probs) <= 0):
            raise NonMonotone("grid probabilities must be strictly increasing")
        object.__setattr__(self, "probs", probs)
        if self.weights is None:
            if probs.size == 1:
                w = np.ones(1)
            else:
                steps = np.diff(probs)
                w = np.append(steps, steps[-1])
        else:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != probs.shape or np.any(w <= 0):
                raise ValueError("weights must be positive and match probs")
        if w.sum() > 1.0 + 1e-12:
            raise ValueError("integration weights exceed unit probability mass")
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "norm_weights", _readonly(w / w.sum()))

    @classmethod
    def uniform(cls, n: int = 99) -> "ProbabilityGrid":
        """Uniform grid at q = 1/(n+1), ..., n/(n+1)."""
        return cls(np.arange(1, n + 1) / (n + 1))

    def trim(self, lo: float, hi: float) -> "ProbabilityGrid":
        """Restrict the grid to probabilities in [lo, hi]."""
        keep = (self.probs >= lo) & (self.probs <= hi)
        if not keep.any():
            raise ValueError(f"no grid points inside [{lo}, {hi}]")
        return ProbabilityGrid(self.probs[keep], self.weights[keep])

    def __len__(self):
        return self.probs.size

    def same_as(self, other: "ProbabilityGrid") -> bool:
        return self is other or (
            np.array_equal(self.probs, other.probs)
            and np.array_equal(self.weights, other.weights)
        )


def _check_grid(a, b):
    if not a.grid.same_as(b.grid):
        raise GridMismatch("operands live on different probability grids")


@dataclass(frozen=True, eq=False)
class QuantileFunction:
    """Discretized quantile function on a shared grid.

    ``values`` are nondecreasing along the grid and bounded by the declared
    support. Construct through :func:`make_quantile_function` to get
    validation and repair of tiny monotonicity violations.
    """

    grid: ProbabilityGrid
    values: np.ndarray
    support_lo: float
    support_hi: float

    def __post_init__(self):
        values = _readonly(self.values)
        if values.ndim != 1 or values.size != len(self.grid):
            raise LengthMismatch(
                f"expected {len(self.grid)} quantile values, got shape "
                f"{values.shape}"
            )
        if self.support_lo > self.support_hi:
            raise SupportViolation("support bounds are inverted")
        lo, hi = values[0], values[-1]
        tol = 1e-9 * max(1.0, abs(lo), abs(hi))
        if lo < self.support_lo - tol or hi > self.support_hi + tol:
            raise SupportViolation(
                f"values span [{lo}, {hi}] outside declared support "
                f"[{self.support_lo}, {self.support_hi}]"
            )
        object.__setattr__(self, "values", values)

    @property
    def support(self):
        return (self.support_lo, self.support_hi)

    def shift(self, s: float) -> "QuantileFunction":
        """Translate the distribution by ``s``."""
        return QuantileFunction(
            self.grid, self.values + s, self.support_lo + s, self.support_hi + s
        )


def make_quantile_function(values, grid, support=None, tol_mono=DEFAULT_TOL_MONO):
    """Validate a quantile vector, repairing violations up to ``tol_mono``.

    Violations no larger than ``tol_mono`` are pooled away with isotonic
    regression so that noisy per-quantile estimates still yield a genuine
    distribution; larger violations raise :class:`NonMonotone`.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size != len(grid):
        raise LengthMismatch(
            f"expected {len(grid)} quantile values, got shape {values.shape}"
        )
    if not np.all(np.isfinite(values)):
        raise ValueError("quantile values must be finite")
    if values.size > 1:
        drop = np.diff(values)
        worst = -drop.min() if drop.size else 0.0
        if worst > tol_mono:
            raise NonMonotone(
                f"quantile values decrease by {worst:.3g} > tol_mono={tol_mono:.3g}"
            )
        if worst > 0:
            values = isotonic_regression(values).x
    if support is None:
        support = (float(values[0]), float(values[-1]))
    lo, hi = float(support[0]), float(support[1])
    if values[0] < lo - 1e-12 or values[-1] > hi + 1e-12:
        raise SupportViolation(
            f"values span [{values[0]}, {values[-1]}] outside support [{lo}, {hi}]"
        )
    return QuantileFunction(grid, values, lo, hi)


def degenerate(x: float, grid: ProbabilityGrid) -> QuantileFunction:
    """Point mass at ``x``: the encoding of a scalar covariate."""
    x = float(x)
    return QuantileFunction(grid, np.full(len(grid), x), x, x)


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Raw, unordered sensor readings for one unit."""

    samples: np.ndarray
    unit_id: object = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.size == 0:
            raise EmptyBatch(f"unit {self.unit_id}: no samples")
        if not np.all(np.isfinite(s)):
            raise ValueError(f"unit {self.unit_id}: non-finite samples")
        object.__setattr__(self, "samples", _readonly(s))


def empirical_quantile_function(batch, grid) -> QuantileFunction:
    """Left-continuous empirical quantile function of a sample batch.

    Each grid point q maps to the smallest sample whose empirical CDF value
    is at least q.
    """
    if isinstance(batch, SampleBatch):
        samples = batch.samples
    else:
        samples = np.asarray(batch, dtype=np.float64)
        if samples.size == 0:
            raise EmptyBatch("no samples")
    s = np.sort(samples)
    n = s.size
    idx = np.ceil(grid.probs * n).astype(int) - 1
    np.clip(idx, 0, n - 1, out=idx)
    return QuantileFunction(grid, s[idx], float(s[0]), float(s[-1]))


def wasserstein_distance(a: QuantileFunction, b: QuantileFunction, order=2) -> float:
    """Wasserstein distance of the given order (1, 2, or inf) on the grid."""
    _check_grid(a, b)
    diff = a.values - b.values
    w = a.grid.norm_weights
    if order == 1:
        return float(np.sum(w * np.abs(diff)))
    if order == 2:
        return float(math.sqrt(np.sum(w * diff * diff)))
    if order in (np.inf, math.inf, "inf", "infinity"):
        return float(np.max(np.abs(diff)))
    raise ValueError(f"unsupported order {order!r}")


def barycenter(members) -> QuantileFunction:
    """Transport barycenter of quantile functions: the pointwise mean."""
    members = list(members)
    if not members:
        raise EmptySet("barycenter of an empty set")
    grid = members[0].grid
    for m in members[1:]:
        if not grid.same_as(m.grid):
            raise GridMismatch("barycenter members live on different grids")
    values = np.mean([m.values for m in members], axis=0)
    lo = float(np.mean([m.support_lo for m in members]))
    hi = float(np.mean([m.support_hi for m in members]))
    return QuantileFunction(grid, values, lo, hi)


# --- Standard normal inverse CDF -------------------------------------------
#
# Rational approximation (Acklam) with one Halley refinement through the
# complementary error function; absolute error well below 1e-12 across the
# open unit interval. Kept internal so the transport and simulation kernels
# carry no special-function dependency.

_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)

_PLOW = 0.02425
_SQRT2 = math.sqrt(2.0)
_erfc = np.frompyfunc(math.erfc, 1, 1)


def _norm_cdf(x):
    z = -np.atleast_1d(np.asarray(x, dtype=np.float64)) / _SQRT2
    return 0.5 * _erfc(z).astype(np.float64)


def norm_inverse_cdf(p):
    """Quantile function of the standard normal distribution."""
    p = np.asarray(p, dtype=np.float64)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("probabilities must lie strictly in (0,1)")
    x = np.empty_like(p)

    lo = p < _PLOW
    hi = p > 1.0 - _PLOW
    mid = ~(lo | hi)
    if lo.any():
        q = np.sqrt(-2.0 * np.log(p[lo]))
        x[lo] = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
                ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if hi.any():
        q = np.sqrt(-2.0 * np.log(1.0 - p[hi]))
        x[hi] = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
                 ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if mid.any():
        q = p[mid] - 0.5
        r = q * q
        x[mid] = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
                 (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)

    # Halley refinement
    e = _norm_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * np.exp(0.5 * x * x)
    x = x - u / (1.0 + 0.5 * x * u)

    return float(x[0]) if scalar else x


def norm_cdf(x):
    """CDF of the standard normal distribution."""
    x = np.asarray(x, dtype=np.float64)
    out = _norm_cdf(x)
    return float(out[0]) if x.ndim == 0 else out


_TRUNC = 3.0
_PHI_LO = norm_cdf(-_TRUNC)
_PHI_HI = norm_cdf(_TRUNC)


def truncated_normal_quantile(mu, sigma, grid) -> QuantileFunction:
    """Quantile function of Normal(mu, sigma^2) truncated to mu +/- 3 sigma."""
    if sigma <= 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    z = norm_inverse_cdf(_PHI_LO + grid.probs * (_PHI_HI - _PHI_LO))
    return QuantileFunction(
        grid, mu + sigma * z, mu - _TRUNC * sigma, mu + _TRUNC * sigma
    )


def truncated_normal_z(grid) -> np.ndarray:
    """Standardized truncated-normal quantiles on the grid (mu=0, sigma=1)."""
    return norm_inverse_cdf(_PHI_LO + grid.probs * (_PHI_HI - _PHI_LO))
