"""Exception hierarchy shared across the package."""


class DistmatchError(Exception):
    """Base class for all distmatch errors."""


class GridMismatch(DistmatchError):
    """Operands do not share the same probability grid."""


class LengthMismatch(DistmatchError):
    """Vector length does not match the expected length."""


class NonMonotone(DistmatchError):
    """Quantile values decrease by more than the repair tolerance."""


class SupportViolation(DistmatchError):
    """Quantile values fall outside the declared support."""


class EmptyBatch(DistmatchError):
    """A sample batch contains no observations."""


class EmptySet(DistmatchError):
    """An operation received an empty collection."""


class NonPositiveSigma(DistmatchError):
    """Scale parameter must be strictly positive."""


class SchemaMismatch(DistmatchError):
    """Units do not share the same covariate schema."""


class PoolTooSmall(DistmatchError):
    """Fewer candidate units than requested neighbors."""


class ArmTooSmall(DistmatchError):
    """A treatment arm has too few units for the requested operation."""


class TooFewUnits(DistmatchError):
    """Not enough units to compute the requested statistic."""


class BadLevel(DistmatchError):
    """Confidence level must lie strictly between 0 and 1."""


class ModelNotFitted(DistmatchError):
    """A regression model was used before being fitted."""


class DegenerateDesign(DistmatchError):
    """Design matrix is unusable even after ridge damping."""


class BadSpec(DistmatchError):
    """Simulation specification is invalid."""


class InternalIdentityViolation(DistmatchError):
    """Two algebraically equivalent computations disagreed; internal bug."""


class ParseError(DistmatchError):
    """Input file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(DistmatchError):
    """Input records are inconsistent with the declared schema."""
