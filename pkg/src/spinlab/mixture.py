"""Model inputs: the mixture function xi and the atomic overlap measure zeta.

A model run is fully specified by the pair (MixtureSpec, ParisiMeasure); both
are immutable after construction and safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError

MASS_TOL = 1e-12


@dataclass(frozen=True)
class MixtureSpec:
    """Mixture xi(x) = sum_p beta_p^2 x^p over finitely many degrees p >= 2.

    ``terms`` is a sequence of (degree, beta_p) pairs with strictly increasing
    degrees and at least one positive coefficient.
    """

    terms: tuple = field(default=())

    def __post_init__(self):
        terms = tuple((int(p), float(b)) for p, b in self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms:
            raise ConfigError("mixture needs at least one (degree, beta) term")
        degrees = [p for p, _ in terms]
        if any(p < 2 for p in degrees):
            raise ConfigError(f"mixture degrees must be >= 2, got {degrees}")
        if any(b < a for a, b in zip(degrees, degrees[1:])) or len(set(degrees)) != len(degrees):
            raise ConfigError(f"mixture degrees must be strictly increasing, got {degrees}")
        if any(b < 0 for _, b in terms):
            raise ConfigError("mixture coefficients must be nonnegative")
        if not any(b > 0 for _, b in terms):
            raise ConfigError("mixture needs at least one positive coefficient")

    def xi(self, x, order: int = 0):
        """Evaluate xi, xi' or xi'' at x (scalar or array), |x| <= 1."""
        if order not in (0, 1, 2):
            raise DomainError(f"derivative order must be 0, 1 or 2, got {order}")
        arr = np.asarray(x, dtype=float)
        if np.any(np.abs(arr) > 1.0 + 1e-15):
            raise DomainError(f"mixture argument out of [-1, 1]: {arr[np.abs(arr) > 1].flat[0]}")
        out = np.zeros_like(arr)
        for p, b in self.terms:
            c = b * b
            if order == 0:
                out += c * arr**p
            elif order == 1:
                out += c * p * arr ** (p - 1)
            else:
                out += c * p * (p - 1) * arr ** (p - 2) if p >= 2 else 0.0
        return out if isinstance(x, np.ndarray) else float(out)

    def theta(self, t):
        """theta(t) = xi'(t) * t - xi(t) on [0, 1]."""
        arr = np.asarray(t, dtype=float)
        if np.any(arr < -1e-15) or np.any(arr > 1.0 + 1e-15):
            raise DomainError("theta argument out of [0, 1]")
        out = self.xi(arr, 1) * arr - self.xi(arr, 0)
        return out if isinstance(t, np.ndarray) else float(out)

    @property
    def degrees(self):
        return tuple(p for p, _ in self.terms)

    def coefficient(self, p: int) -> float:
        for q, b in self.terms:
            if q == p:
                return b
        return 0.0


def xi_eval(spec: MixtureSpec, x, order: int = 0):
    """Functional form of MixtureSpec.xi."""
    return spec.xi(x, order)


def theta_eval(spec: MixtureSpec, t):
    """Functional form of MixtureSpec.theta."""
    return spec.theta(t)


@dataclass(frozen=True)
class ParisiMeasure:
    """Atomic probability measure on [0, 1] plus the external field h.

    Atoms are (location, mass) pairs with strictly increasing locations and
    masses summing to 1 within 1e-12; silently renormalizing is refused so a
    bad config fails loudly.  The field h rides along because every downstream
    process starts at h.
    """

    atoms: tuple = field(default=())
    h: float = 0.0

    def __post_init__(self):
        atoms = tuple((float(q), float(m)) for q, m in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "h", float(self.h))
        if not atoms:
            raise ConfigError("measure needs at least one atom")
        locs = [q for q, _ in atoms]
        masses = [m for _, m in atoms]
        if any(q < 0 or q > 1 for q in locs):
            raise ConfigError(f"atom locations must lie in [0, 1], got {locs}")
        if any(b <= a for a, b in zip(locs, locs[1:])):
            raise ConfigError(f"atom locations must be strictly increasing, got {locs}")
        if any(m <= 0 or m > 1 for m in masses):
            raise ConfigError(f"atom masses must lie in (0, 1], got {masses}")
        total = sum(masses)
        if abs(total - 1.0) > MASS_TOL:
            raise ConfigError(
                f"atom masses sum to {total!r}, off by more than {MASS_TOL}; "
                "renormalize explicitly in the config"
            )

    @property
    def locations(self) -> np.ndarray:
        return np.array([q for q, _ in self.atoms])

    @property
    def masses(self) -> np.ndarray:
        return np.array([m for _, m in self.atoms])

    @property
    def q_star(self) -> float:
        return self.atoms[-1][0]

    @property
    def r(self) -> int:
        """Number of atoms (tree depth of the associated cascade)."""
        return len(self.atoms)

    def cdf(self, t):
        """m(t) = zeta([0, t]); right-continuous step function."""
        arr = np.asarray(t, dtype=float)
        if np.any(arr < -1e-15) or np.any(arr > 1.0 + 1e-15):
            raise DomainError("cdf argument out of [0, 1]")
        out = np.zeros_like(arr)
        for q, m in self.atoms:
            out += np.where(arr >= q - 1e-15, m, 0.0)
        return out if isinstance(t, np.ndarray) else float(out)

    def cdf_values(self) -> np.ndarray:
        """Cumulative masses m_1 <= ... <= m_r = 1 at the atom locations."""
        return np.cumsum(self.masses)


def measure_cdf(meas: ParisiMeasure, t):
    """Functional form of ParisiMeasure.cdf."""
    return meas.cdf(t)
