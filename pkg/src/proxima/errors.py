"""Exception types shared across the package."""


class ProximaError(Exception):
    pass


class ConfigurationError(ProximaError, ValueError):
    """Bad dimensions, unknown names, or invalid hyperparameters."""


class NumericError(ProximaError, ArithmeticError):
    """A non-finite value showed up where it must not."""


class UsageError(ProximaError, RuntimeError):
    """API called out of order (e.g. stepping a finished episode)."""
