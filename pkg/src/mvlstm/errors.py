"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class ContractError(ValueError):
    """Raised when a call violates a documented precondition."""


class DataError(ValueError):
    """Raised when an input data file is missing or malformed."""


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss."""


class ConfigError(ValueError):
    """Raised when a run configuration is malformed."""
