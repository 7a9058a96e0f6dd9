"""Backward semilinear PDE for the replica functional, plus its level recursion.

Two independent routes to the same object:

* ``solve_pde`` -- semi-implicit finite differences on [0,1] x [-L,L], marching
  backward from ``u(1,x) = log cosh(x)``.  The quadratic slope term uses the
  previous slice (explicit); diffusion is implicit (tridiagonal), so there is
  no step-size stability limit.  The time-dependent diffusion coefficient is
  absorbed exactly by stepping in the variable tau = xi'(t).
* ``cole_hopf_levels`` -- for an atomic measure the solution restricted to the
  atom times satisfies a closed recursion of scalar log-moment Gaussian
  averages; evaluated with Gauss-Hermite quadrature on a 1-D cumulative-field
  grid.  Serves as an oracle for the finite-difference route and feeds the
  tilted-cascade kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .backend import get_kernels
from .errors import ConfigError, DomainError, ExtrapolationError, NumericalFailure
from .mixture import MixtureSpec, ParisiMeasure
from .quadrature import gauss_hermite

UX_CLAMP = 1.0 - 1e-12
MAX_TAU_STEP = 0.05  # accuracy guard for the explicit quadratic term


def log_cosh(x):
    """Overflow-safe log cosh."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


@dataclass(frozen=True)
class PdeGrid:
    """Space-time discretization parameters.

    ``x_halfwidth`` must dominate the field scale (>= 6 + |h|); ``nx`` is odd
    so x = 0 is a node.  ``dt_max`` bounds the marching step and ``store_dt``
    the spacing of retained slices; knots (0, 1 and every atom) are always
    step boundaries and always retained.
    """

    x_halfwidth: float
    nx: int = 1601
    dt_max: float = 1e-4
    store_dt: float = 1e-3

    def __post_init__(self):
        if self.nx < 401:
            raise ConfigError(f"nx must be >= 401, got {self.nx}")
        if self.nx % 2 == 0:
            raise ConfigError(f"nx must be odd, got {self.nx}")
        if self.dt_max <= 0 or self.store_dt <= 0:
            raise ConfigError("dt_max and store_dt must be positive")

    @staticmethod
    def for_model(
        mixture: MixtureSpec,
        measure: ParisiMeasure,
        nx: int = 1601,
        dt_max: Optional[float] = None,
        store_dt: float = 1e-3,
        x_halfwidth: Optional[float] = None,
    ) -> "PdeGrid":
        """Default grid: L = 8 + |h|, step scaled to the diffusion strength."""
        if x_halfwidth is None:
            x_halfwidth = 8.0 + abs(measure.h)
        if dt_max is None:
            xi2 = float(mixture.xi(1.0, 2))
            dt_max = min(1e-3, 1e-4 * max(1.0, 2.0 / xi2))
        return PdeGrid(x_halfwidth, nx=nx, dt_max=dt_max, store_dt=store_dt)

    def validate_for(self, measure: ParisiMeasure):
        need = 6.0 + abs(measure.h)
        if self.x_halfwidth < need:
            raise ConfigError(
                f"x_halfwidth {self.x_halfwidth} too small; need >= {need} for h={measure.h}"
            )

    def x_nodes(self) -> np.ndarray:
        return np.linspace(-self.x_halfwidth, self.x_halfwidth, self.nx)

    def time_knots(self, measure: ParisiMeasure) -> np.ndarray:
        knots = np.unique(np.concatenate(([0.0, 1.0], measure.locations)))
        return knots


@dataclass(frozen=True)
class PdeSolution:
    """Gridded backward solution, queryable by bilinear interpolation.

    ``ts`` are the retained times (ascending, 0 and 1 included), ``u`` and
    ``ux`` the value and slope fields on (time, space).  Immutable; share
    freely.
    """

    grid: PdeGrid
    mixture: MixtureSpec
    measure: ParisiMeasure
    ts: np.ndarray
    xs: np.ndarray
    u: np.ndarray
    ux: np.ndarray

    @property
    def x0(self) -> float:
        return float(self.xs[0])

    @property
    def dx(self) -> float:
        return float(self.xs[1] - self.xs[0])

    def time_bracket(self, t: float):
        """Stored-row index and weight such that t = (1-w)*ts[i] + w*ts[i+1]."""
        if t < -1e-12 or t > 1.0 + 1e-12:
            raise DomainError(f"time {t} outside [0, 1]")
        t = min(max(t, 0.0), 1.0)
        i = int(np.searchsorted(self.ts, t, side="right") - 1)
        i = min(max(i, 0), len(self.ts) - 2)
        w = (t - self.ts[i]) / (self.ts[i + 1] - self.ts[i])
        return i, float(min(max(w, 0.0), 1.0))

    def query_ux(self, t: float, x):
        """Interpolated slope field, clamped strictly inside (-1, 1)."""
        xarr = np.asarray(x, dtype=float)
        if np.any(np.abs(xarr) > self.grid.x_halfwidth + 1e-12):
            bad = xarr[np.abs(xarr) > self.grid.x_halfwidth + 1e-12].flat[0]
            raise ExtrapolationError(
                f"x={bad} outside the solved range +-{self.grid.x_halfwidth}; enlarge the grid"
            )
        i, w = self.time_bracket(t)
        vals = get_kernels().interp_ux(
            self.ux, i, w, np.atleast_1d(xarr).astype(float), self.x0, self.dx
        )
        vals = np.clip(vals, -UX_CLAMP, UX_CLAMP)
        return vals if isinstance(x, np.ndarray) else float(vals[0])

    def query_u(self, t: float, x):
        """Interpolated value field (bilinear)."""
        xarr = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(np.abs(xarr) > self.grid.x_halfwidth + 1e-12):
            raise ExtrapolationError("x outside the solved range")
        i, w = self.time_bracket(t)
        row = self.u[i] + w * (self.u[i + 1] - self.u[i])
        vals = np.interp(xarr, self.xs, row)
        return vals if isinstance(x, np.ndarray) else float(vals[0])


def _march_times(measure: ParisiMeasure, grid: PdeGrid):
    """All marching times (ascending) plus per-step CDF value and store flags."""
    knots = grid.time_knots(measure)
    times = [np.array([0.0])]
    for a, b in zip(knots[:-1], knots[1:]):
        nsub = max(1, int(np.ceil((b - a) / grid.dt_max)))
        times.append(np.linspace(a, b, nsub + 1)[1:])
    ts = np.concatenate(times)
    # m(t) on [t_k, t_{k+1}) is the CDF at the left endpoint
    m_steps = measure.cdf(ts[:-1])
    knot_set = set(np.round(knots, 15))
    store = np.zeros(len(ts), dtype=np.int8)
    store[0] = 1
    store[-1] = 1
    last = 0.0
    for k in range(1, len(ts) - 1):
        if round(float(ts[k]), 15) in knot_set or ts[k] - last >= grid.store_dt * (1 - 1e-9):
            store[k] = 1
            last = ts[k]
    return ts, m_steps, store


def _slope_field(u: np.ndarray, dx: float) -> np.ndarray:
    """Spatial slope of the stored slices: centered inside, one-sided at edges."""
    ux = np.empty_like(u)
    ux[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2.0 * dx)
    ux[:, 0] = (u[:, 1] - u[:, 0]) / dx
    ux[:, -1] = (u[:, -1] - u[:, -2]) / dx
    return ux


def _check_invariants(sol: PdeSolution):
    if np.any(np.abs(sol.ux) >= 1.0):
        raise NumericalFailure("slope bound violated: |ux| >= 1 on the grid")
    if np.any(np.diff(sol.ux, axis=1) <= 0.0):
        t_bad = sol.ts[np.argwhere(np.any(np.diff(sol.ux, axis=1) <= 0.0, axis=1))[0][0]]
        raise NumericalFailure(f"convexity violated: ux not strictly increasing at t={t_bad}")
    q_star = sol.measure.q_star
    tanh_x = np.tanh(sol.xs)
    plateau = sol.ts >= q_star - 1e-12
    err = np.abs(sol.ux[plateau] - tanh_x[None, :]).max()
    if err > 1e-4:
        raise NumericalFailure(
            f"plateau identity violated: max |ux - tanh| = {err:.3e} > 1e-4 for t >= q_*"
        )


def solve_pde(
    mixture: MixtureSpec, measure: ParisiMeasure, grid: Optional[PdeGrid] = None
) -> PdeSolution:
    """Solve the backward initial value problem and return the gridded solution.

    Terminal slice is log cosh exactly; slope boundary conditions are -1/+1 at
    x = -L/+L, matching the linear growth of the terminal datum.
    """
    if grid is None:
        grid = PdeGrid.for_model(mixture, measure)
    grid.validate_for(measure)
    xs = grid.x_nodes()
    ts, m_steps, store = _march_times(measure, grid)
    xi1 = mixture.xi(ts, 1)
    a_steps = (xi1[1:] - xi1[:-1]) / 2.0
    if np.any(a_steps > MAX_TAU_STEP):
        raise ConfigError(
            f"dt_max {grid.dt_max} gives a diffusion step above {MAX_TAU_STEP}; reduce it"
        )

    u_terminal = log_cosh(xs)
    # march backward: step k walks ts[k+1] -> ts[k]
    kern = get_kernels()
    store_steps = store[:-1][::-1].copy()  # flag of the step's *result* time
    out = kern.parisi_march(
        u_terminal, a_steps[::-1].copy(), m_steps[::-1].copy(), float(xs[1] - xs[0]), store_steps
    )
    ts_kept = np.concatenate((ts[:-1][store[:-1] == 1], [1.0]))
    u = np.empty((len(ts_kept), grid.nx))
    u[-1] = u_terminal
    u[:-1] = out[::-1]
    ux = _slope_field(u, float(xs[1] - xs[0]))
    sol = PdeSolution(
        grid=grid, mixture=mixture, measure=measure, ts=ts_kept, xs=xs, u=u, ux=ux
    )
    _check_invariants(sol)
    return sol


def query_ux(sol: PdeSolution, t: float, x):
    """Functional form of PdeSolution.query_ux."""
    return sol.query_ux(t, x)


def _interp_linear_extrap(sgrid: np.ndarray, vals: np.ndarray, s):
    """Linear interpolation with linear extension beyond the table ends."""
    out = np.interp(s, sgrid, vals)
    lo_slope = (vals[1] - vals[0]) / (sgrid[1] - sgrid[0])
    hi_slope = (vals[-1] - vals[-2]) / (sgrid[-1] - sgrid[-2])
    out = np.where(s < sgrid[0], vals[0] + lo_slope * (s - sgrid[0]), out)
    out = np.where(s > sgrid[-1], vals[-1] + hi_slope * (s - sgrid[-1]), out)
    return out


@dataclass(frozen=True)
class CascadeLevels:
    """Level functions of the cumulative field, one per atom time plus t=0.

    ``values[p]`` tabulates the level function at time q_p on ``s_grid``
    (q_0 = 0).  ``exponents[p]`` is the CDF at q_p -- the exponent of the
    recursion step from level p+1 down to p and of the transition kernel
    attached to that step.  ``deltas[p]`` is the slope-variance increment
    xi'(q_{p+1}) - xi'(q_p); ``terminal_var`` the remaining xi'(1) - xi'(q_r).
    """

    measure: ParisiMeasure
    mixture: MixtureSpec
    s_grid: np.ndarray
    values: tuple
    exponents: np.ndarray
    deltas: np.ndarray
    terminal_var: float

    @property
    def r(self) -> int:
        return len(self.values) - 1

    def evaluate(self, p: int, s):
        """Level function p at field value(s) s, linearly extended outside."""
        arr = np.asarray(s, dtype=float)
        out = _interp_linear_extrap(self.s_grid, self.values[p], arr)
        return out if isinstance(s, np.ndarray) else float(out)


def _gh_level_step(next_vals, s_grid, delta, exponent, quad_order):
    """One recursion step: Gaussian average of exp(m * next) at exponent m."""
    if delta <= 1e-15:
        return next_vals.copy()
    z, w = gauss_hermite(quad_order)
    shifted = s_grid[:, None] + np.sqrt(delta) * z[None, :]
    g = _interp_linear_extrap(s_grid, next_vals, shifted)
    if exponent <= 1e-13:
        return g @ w
    peak = g.max(axis=1, keepdims=True)
    avg = np.exp(exponent * (g - peak)) @ w
    if np.any(~np.isfinite(avg)) or np.any(avg <= 0):
        raise NumericalFailure("level recursion quadrature did not converge")
    return (np.log(avg) / exponent + peak[:, 0]).astype(float)


def cole_hopf_levels(
    mixture: MixtureSpec,
    measure: ParisiMeasure,
    s_grid: Optional[np.ndarray] = None,
    quad_order: int = 96,
) -> CascadeLevels:
    """Evaluate the level recursion for an atomic measure.

    Level r is the log of the Gaussian-smoothed cosh over the remaining
    variance above the last atom (so level p agrees with the PDE solution at
    time q_p); lower levels apply the log-moment average at the CDF exponent
    of their time.  A zero exponent takes the plain-average limit.
    """
    locs = measure.locations
    r = measure.r
    if s_grid is None:
        half = abs(measure.h) + 8.0 + 6.0 * np.sqrt(float(mixture.xi(1.0, 1)))
        s_grid = np.linspace(-half, half, 8193)
    xi1 = np.concatenate(([0.0], mixture.xi(locs, 1)))  # at q_0=0, q_1..q_r
    terminal_var = float(mixture.xi(1.0, 1) - xi1[-1])
    exponents = measure.cdf(np.concatenate(([0.0], locs)))
    deltas = np.diff(xi1)

    values = [None] * (r + 1)
    values[r] = _gh_level_step(log_cosh(s_grid), s_grid, terminal_var, 1.0, quad_order)
    for p in range(r - 1, -1, -1):
        values[p] = _gh_level_step(
            values[p + 1], s_grid, float(deltas[p]), float(exponents[p]), quad_order
        )
    return CascadeLevels(
        measure=measure,
        mixture=mixture,
        s_grid=s_grid,
        values=tuple(values),
        exponents=exponents,
        deltas=deltas,
        terminal_var=terminal_var,
    )
