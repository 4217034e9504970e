"""Exception types shared across the library and the CLI."""


class ConfigError(ValueError):
    """Invalid configuration document or CLI flags (exit code 2)."""


class DataError(ValueError):
    """Unreadable or malformed input data (exit code 3)."""


class NumericError(RuntimeError):
    """A numeric procedure failed: factorization, solver, quadrature (exit code 4)."""
