"""Exception types shared across the package."""


class DataError(ValueError):
    """Raised when an input file or in-memory structure violates the data contract."""


class ConfigError(ValueError):
    """Raised when a configuration value is out of range or inconsistent."""
