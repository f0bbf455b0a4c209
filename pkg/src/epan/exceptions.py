"""Exception types raised across the package."""


class EPANError(Exception):
    """Base class for all package errors."""


class DimensionError(EPANError, ValueError):
    """Tensor or image extents are incompatible."""


class ParameterError(EPANError, ValueError):
    """A scalar argument is out of its valid range."""


class ContractError(EPANError, RuntimeError):
    """An operation was called in a state that violates its preconditions."""


class ConfigurationError(EPANError, ValueError):
    """A model, training or run configuration is invalid."""


class DataError(EPANError, ValueError):
    """Input data does not satisfy a dataset-level requirement."""


class GeometryError(EPANError, ValueError):
    """A search area or box cannot hold the requested window."""


class CheckpointError(EPANError, OSError):
    """A checkpoint file is missing, truncated or has an unsupported format."""


class TrainingDivergedError(EPANError, RuntimeError):
    """The training loss became non-finite."""
