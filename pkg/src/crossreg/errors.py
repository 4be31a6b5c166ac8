"""Exception types shared across the package."""


class CrossRegError(Exception):
    """Base class for all package-specific failures."""

    category = "error"


class DimensionMismatchError(CrossRegError):
    """Tensor shapes are incompatible for the requested operation."""

    category = "dimension-mismatch"


class NumericError(CrossRegError):
    """A computation produced or received non-finite values."""

    category = "numeric"


class ContractError(CrossRegError):
    """An operation was called outside its documented preconditions."""

    category = "contract"


class ConfigError(CrossRegError):
    """Invalid or inconsistent configuration."""

    category = "config"


class ParseError(CrossRegError):
    """A data file could not be parsed; carries the failing byte offset."""

    category = "parse"

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class CorruptFileError(ParseError):
    """A binary file has an impossible size or layout."""

    category = "corrupt-file"


class DegenerateFeatureError(CrossRegError):
    """A feature row has zero norm and cannot enter cosine similarity."""

    category = "degenerate-feature"


class InsufficientDataError(CrossRegError):
    """Too few correspondences to attempt pose estimation."""

    category = "insufficient-data"


class DegenerateConfigurationError(CrossRegError):
    """The 2D-3D configuration is rank deficient for the pose solver."""

    category = "degenerate-configuration"


class EstimationFailureError(CrossRegError):
    """No acceptable pose model was found."""

    category = "estimation-failure"


class NoNegativeError(CrossRegError):
    """Every candidate pixel lies inside the safe radius; sample is skipped."""

    category = "no-negative"


class UndefinedMetricError(CrossRegError):
    """A metric was requested over an empty collection."""

    category = "undefined-metric"


class CheckpointError(CrossRegError):
    """A parameter container failed to load; names the offending tensor."""

    category = "checkpoint"
