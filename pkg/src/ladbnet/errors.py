"""Exception types shared across the package."""


class LadbnetError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(LadbnetError, ValueError):
    """Tensor or array shapes are incompatible with the requested operation."""


class ConfigurationError(LadbnetError, ValueError):
    """A configuration value is out of range or unknown."""


class ContractError(LadbnetError, RuntimeError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class StateError(LadbnetError, RuntimeError):
    """An object was used before it reached the required state."""


class DataError(LadbnetError, ValueError):
    """Malformed or inconsistent input data (CSV rows, gaps, duplicates)."""


class InsufficientDataError(LadbnetError, ValueError):
    """Not enough rows to perform the requested split or windowing."""


class FormatError(LadbnetError, ValueError):
    """A serialized file is corrupt; the message names the offending section."""


class CalibrationError(LadbnetError, ValueError):
    """Quantization calibration could not be performed."""


class StructuralError(LadbnetError, RuntimeError):
    """Model graph surgery applied to an incompatible structure."""
