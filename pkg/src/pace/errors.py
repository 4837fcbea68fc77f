"""Error taxonomy shared by every module.

The CLI maps these onto process exit codes, so raising the right class is
part of the public contract, not a style choice.
"""


class PaceError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PaceError):
    """Invalid parameter value, malformed config key, or inconsistent plan."""


class StateError(PaceError):
    """Operation called in a lifecycle state that forbids it."""


class ShapeError(PaceError):
    """Dimension or shape mismatch between arrays that must agree."""


class DataError(PaceError):
    """Unreadable, corrupt, or internally inconsistent data file."""


class NumericalError(PaceError):
    """Numerical failure: non-SPD solve, degenerate input, non-finite values."""
