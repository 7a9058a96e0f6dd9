"""Numerical laboratory for spin distributions of mixed p-spin glass models.

The package couples five routes to the same asymptotic objects -- a backward
semilinear PDE for the replica free-energy functional, tree-coupled branching
diffusions, Ruelle probability cascades with tilted node variables, closed-form
spin statistics, and finite-size Monte Carlo -- and cross-validates them
against each other.
"""

__version__ = "0.1.0"

from .mixture import MixtureSpec, ParisiMeasure
from .errors import (
    SpinLabError,
    ConfigError,
    DomainError,
    ExtrapolationError,
    NumericalFailure,
    UnsupportedMeasureError,
)

__all__ = [
    "MixtureSpec",
    "ParisiMeasure",
    "SpinLabError",
    "ConfigError",
    "DomainError",
    "ExtrapolationError",
    "NumericalFailure",
    "UnsupportedMeasureError",
    "__version__",
]
