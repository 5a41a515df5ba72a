"""Exception hierarchy shared across the package."""


class FrameProjError(Exception):
    """Base class for every error raised by frameproj."""


class DimensionError(FrameProjError, ValueError):
    """Shapes are incompatible with the requested operation."""


class NumericDomainError(FrameProjError, ArithmeticError):
    """Input lies outside the domain of an elementwise function."""


class NumericOverflowError(FrameProjError, ArithmeticError):
    """An operation on finite inputs produced NaN or Inf."""


class ContractError(FrameProjError, ValueError):
    """A precondition of an operation was violated."""


class TapeStateError(FrameProjError, RuntimeError):
    """A recorded graph was used after it had already been consumed."""


class ConfigError(FrameProjError, ValueError):
    """A configuration value is invalid or inconsistent."""


class DegenerateVectorError(FrameProjError, ValueError):
    """A vector has (near) zero norm where a direction is required."""


class StaleCacheError(FrameProjError):
    """A cached view does not match the inputs it is being loaded for."""


class FormatError(FrameProjError, IOError):
    """A binary file is truncated, corrupted or of the wrong kind."""


class ConstructionError(FrameProjError, ValueError):
    """A geometric configuration cannot be realized."""


class MetricError(FrameProjError, ValueError):
    """A metric is undefined for the given inputs."""


class TrainingAborted(FrameProjError, RuntimeError):
    """Optimization hit a non-finite gradient."""
