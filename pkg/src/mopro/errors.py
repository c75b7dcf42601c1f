"""Exception taxonomy shared by every mopro module."""


class MoproError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MoproError):
    """Operand shapes are incompatible; the message carries both shapes."""


class DegenerateInputError(MoproError):
    """Input is numerically degenerate (e.g. a zero-norm row fed to a normalizer)."""


class NumericError(MoproError):
    """Non-finite values where finite ones are required."""


class ContractViolationError(MoproError):
    """A caller broke a documented precondition (e.g. enqueued a non-unit vector)."""


class StateError(MoproError):
    """Operation invoked before the object reached the required state."""


class InitializationError(StateError):
    """A store could not be initialized (e.g. a class with no samples)."""


class ConfigError(MoproError):
    """A configuration value is outside its valid range."""


class StructuralError(MoproError):
    """Persisted or paired structures disagree (parameter shapes, class counts)."""


class DataFormatError(MoproError):
    """A file failed to parse; the message names the byte offset when known."""
