"""Exception types shared across the toolkit."""


class ConfigurationError(ValueError):
    """Invalid configuration, geometry, file format, or input metadata."""


class NumericalFailure(RuntimeError):
    """Numerical breakdown: non-finite data, factorization or iteration failure."""
