"""Exception types shared across the package."""


class PMNError(Exception):
    """Base class for all package errors."""


class DimensionError(PMNError, ValueError):
    """Array shapes do not fit the requested operation."""


class DomainError(PMNError, ValueError):
    """Input lies outside the mathematical domain of an operation."""


class ConfigError(PMNError, ValueError):
    """Invalid hyperparameter or configuration value."""


class DataError(PMNError, ValueError):
    """Malformed data, e.g. a label outside the class range."""


class UsageError(PMNError, RuntimeError):
    """API called in the wrong order or with a missing prerequisite."""


class NonFiniteError(PMNError, FloatingPointError):
    """A NaN or infinity showed up where finite numbers are required."""


class VersionError(PMNError, ValueError):
    """File format or checkpoint incompatible with this build."""
