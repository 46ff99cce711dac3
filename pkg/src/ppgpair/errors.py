"""Exception types, grouped by the CLI exit code they map to."""


class ConfigError(ValueError):
    """Bad flags or configuration (exit 1)."""


class DataError(ValueError):
    """Malformed or inconsistent input data (exit 2)."""


class NumericError(RuntimeError):
    """NaN loss, divergence, or a failed gradient check (exit 3)."""
