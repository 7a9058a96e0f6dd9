"""Exception taxonomy shared by all modules.

CLI exit codes map onto these classes: ConfigError -> 1, NumericalFailure -> 2.
"""


class SpinLabError(Exception):
    """Base class for all package errors."""


class ConfigError(SpinLabError):
    """Invalid configuration or precondition violation detected before computing."""


class DomainError(ConfigError):
    """Argument outside the mathematical domain of an operation."""


class ExtrapolationError(DomainError):
    """Query outside the solved spatial grid; the caller must enlarge the grid."""


class UnsupportedMeasureError(ConfigError):
    """Measure whose level exponents cannot drive Poisson-Dirichlet sampling."""


class NumericalFailure(SpinLabError):
    """A computation finished but violated a required invariant."""
