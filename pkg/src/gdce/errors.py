"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError (and plain ValueError/OSError) -> 2, NumericalError -> 3.
"""


class GdceError(Exception):
    pass


class ConfigError(GdceError):
    """Bad run configuration: unknown keys, malformed overrides, missing files."""


class DataError(GdceError):
    """Malformed or contract-violating data: images, manifests, checkpoints."""


class NumericalError(GdceError):
    """Non-finite values or diverging optimization."""
