"""Matching-based causal inference for distribution-valued data.

Units carry covariates and outcomes represented as quantile functions on a
shared probability grid; scalars are point masses on the same grid. A
diagonal metric over per-covariate squared 2-Wasserstein distances is learned
on a training split, then used for K-nearest-neighbor estimation of
conditional and average treatment effect curves, positivity diagnostics, and
matching-based pointwise confidence bands.
"""

from .data import (
    CATEGORY,
    DISTRIBUTION,
    SCALAR,
    CovariateField,
    Dataset,
    Unit,
)
from .errors import (
    ArmTooSmall,
    BadLevel,
    BadSpec,
    DegenerateDesign,
    DistmatchError,
    EmptyBatch,
    EmptySet,
    GridMismatch,
    InternalIdentityViolation,
    LengthMismatch,
    ModelNotFitted,
    NonMonotone,
    NonPositiveSigma,
    ParseError,
    PoolTooSmall,
    SchemaError,
    SchemaMismatch,
    SupportViolation,
    TooFewUnits,
)
from .estimators import (
    EffectCurve,
    conditional_barycenter,
    cross_arm_neighbors,
    estimate_ate,
    estimate_cate,
    estimate_cate_batch,
    full_distance_matrix,
    ite_contrast,
    ite_curves,
    average_ite,
)
from .inference import (
    InferenceReport,
    QuantileLinearMeans,
    bias_correction,
    confidence_band,
    variance_hat,
)
from .io import (
    read_units,
    write_units,
)
from .metric import (
    FitConfig,
    FitResult,
    MatchedGroup,
    MetricParams,
    covariate_distance,
    fit_metric,
    knn_predict,
    knn_set,
    training_loss,
)
from .overlap import (
    OverlapReport,
    assess_overlap,
    classify_accuracy,
    flag_positivity,
    matched_group_report,
)
from .quantiles import (
    ProbabilityGrid,
    QuantileFunction,
    SampleBatch,
    barycenter,
    degenerate,
    empirical_quantile_function,
    make_quantile_function,
    norm_cdf,
    norm_inverse_cdf,
    truncated_normal_quantile,
    wasserstein_distance,
)
from .simulation import (
    BenchmarkResult,
    GroundTruth,
    SimulationSpec,
    baseline_linear_propensity_flags,
    baseline_lr_cate,
    generate,
    generate_split,
    integrated_absolute_error,
    integrated_relative_error,
    run_benchmark,
)

__version__ = "0.1.0"
