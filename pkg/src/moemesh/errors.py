"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
TraceSchemaError -> 3, InvariantError -> 4.
"""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


class TraceSchemaError(ValueError):
    """A trace file or record violates the canonical trace schema."""


class InvariantError(RuntimeError):
    """An internal consistency check failed; indicates a bug, not bad input."""
