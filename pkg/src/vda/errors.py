"""Exception types shared across the package."""


class VdaError(Exception):
    """Base class for all package errors."""


class FormatError(VdaError):
    """Malformed container or header in an input file."""


class UnsupportedFormatError(VdaError):
    """Recognized container with an unsupported codec or channel layout."""


class SchemaError(VdaError):
    """Tabular input does not match the expected schema."""


class ConfigurationError(VdaError):
    """Invalid analysis configuration (band edges, rates, counts)."""


class AlignmentError(VdaError):
    """Clean/degraded pair could not be time-aligned."""


class PreconditionError(VdaError):
    """Input violates an operation precondition (e.g. too short)."""


class DegenerateInputError(VdaError):
    """Input is numerically degenerate (all-silent, zero energy)."""


class MetricError(VdaError):
    """A metric computation failed; the message names the metric."""


class StratificationError(VdaError):
    """Observation rows cannot be split into the required strata."""


class UnderdeterminedError(VdaError):
    """Too few observations to support the requested fit."""


class DependencyError(VdaError):
    """A required upstream artifact is missing or unusable."""
