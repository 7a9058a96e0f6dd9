"""Multiscale fixed-point identity between cluster magnetization and cavity field.

A cluster at scale q is realized as one path frozen at q plus an ensemble of
independent continuations to t = 1 (equal in law to conditioning on the ball
around the cluster root).  The conditional magnetization is the mean of
tanh(X_1) over continuations, the conditional cavity field the mean of X_1,
and the identity states

    <s> = ux(q, <y> - C(q) <s>),      C(q) = int_q^1 xi''(t) m(t) dt,

with C the correction coefficient (exact piecewise integral here).  The check
reports the residual with a delta-method standard error; a damped fixed-point
solver is provided as a secondary exploration utility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import ensemble_paths
from .errors import ConfigError, DomainError
from .seeding import seed_sequence
from .mixture import MixtureSpec, ParisiMeasure
from .parisi import PdeSolution


def onsager_coefficient(mixture: MixtureSpec, measure: ParisiMeasure, q: float) -> float:
    """Exact correction coefficient: xi'' integrated against the CDF on [q, 1].

    Piecewise: on each knot interval the CDF is constant, so the integral is
    the CDF value times the xi' increment.
    """
    if q < -1e-12 or q > 1.0 + 1e-12:
        raise DomainError(f"q={q} outside [0, 1]")
    q = min(max(q, 0.0), 1.0)
    knots = np.unique(np.concatenate(([q, 1.0], measure.locations[measure.locations > q])))
    total = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        total += measure.cdf(float(a)) * float(mixture.xi(b, 1) - mixture.xi(a, 1))
    return total


@dataclass(frozen=True)
class TapReport:
    """Per-cluster conditional estimates and the identity residual."""

    q: float
    onsager: float
    x_q: float
    s_mean: float
    s_se: float
    y_mean: float
    y_se: float
    residual: float
    residual_se: float
    drift_gap: float
    drift_gap_se: float

    @property
    def passed(self) -> bool:
        return abs(self.residual) <= 3.0 * self.residual_se


def _cluster_report(sol: PdeSolution, q: float, x_q: float, x1: np.ndarray, C: float) -> TapReport:
    n = len(x1)
    s_vals = np.tanh(x1)
    s_mean, y_mean = float(s_vals.mean()), float(x1.mean())
    s_se = float(s_vals.std(ddof=1) / np.sqrt(n))
    y_se = float(x1.std(ddof=1) / np.sqrt(n))
    cov_sy = float(np.cov(s_vals, x1)[0, 1] / n)
    w = y_mean - C * s_mean
    ux = sol.query_ux(q, w)
    # slope of ux in x for the delta method
    eps = 1e-5
    ux_x = (sol.query_ux(q, w + eps) - sol.query_ux(q, w - eps)) / (2 * eps)
    residual = s_mean - ux
    # residual = s - ux(q, y - C s): d/ds = 1 + C ux_x, d/dy = -ux_x
    a, b = 1.0 + C * ux_x, -ux_x
    var = (a * s_se) ** 2 + (b * y_se) ** 2 + 2 * a * b * cov_sy
    residual_se = float(np.sqrt(max(var, 0.0)))
    # intermediate identity: <y> - X_q - C <s> -> 0
    gap = y_mean - x_q - C * s_mean
    gvar = y_se**2 + (C * s_se) ** 2 - 2 * C * cov_sy
    return TapReport(
        q=q,
        onsager=C,
        x_q=x_q,
        s_mean=s_mean,
        s_se=s_se,
        y_mean=y_mean,
        y_se=y_se,
        residual=float(residual),
        residual_se=residual_se,
        drift_gap=float(gap),
        drift_gap_se=float(np.sqrt(max(gvar, 0.0))),
    )


def tap_check(
    sol: PdeSolution,
    q: float,
    n_clusters: int = 50,
    n_branches: int = 2000,
    rng_seed=0,
    steps: int = 4000,
):
    """Simulate cluster roots to q and branch ensembles; report per cluster.

    Returns a list of TapReport.  q must lie in [0, q_*]; n_branches >= 1000
    keeps the conditional means inside the stated tolerances.
    """
    meas = sol.measure
    if q < -1e-12 or q > meas.q_star + 1e-12:
        raise ConfigError(f"q={q} must lie in [0, q_*={meas.q_star}]")
    if n_branches < 1000:
        raise ConfigError("n_branches must be >= 1000")
    q = min(max(q, 0.0), meas.q_star)
    C = onsager_coefficient(sol.mixture, meas, q)
    root = seed_sequence(rng_seed)
    s_roots, s_cont = root.spawn(2)
    Q1 = np.array([[meas.q_star]])
    if q > 1e-14:
        roots = ensemble_paths(
            sol, Q1, n_clusters, checkpoints=[q], rng_seed=s_roots, t_end=q, steps=steps
        ).X[0, 0]
    else:
        roots = np.full(n_clusters, meas.h)
    x_init = np.repeat(roots, n_branches)
    res = ensemble_paths(
        sol,
        Q1,
        n_clusters * n_branches,
        checkpoints=[1.0],
        rng_seed=s_cont,
        t_init=q,
        t_end=1.0,
        steps=steps,
        x_init=x_init,
    )
    x1 = res.X[0, 0].reshape(n_clusters, n_branches)
    return [
        _cluster_report(sol, q, float(roots[c]), x1[c], C) for c in range(n_clusters)
    ]


def aggregate_residual(reports):
    """Mean residual across clusters with its spread-based standard error."""
    res = np.array([r.residual for r in reports])
    n = len(res)
    if n == 1:
        return float(res[0]), float(reports[0].residual_se)
    return float(res.mean()), float(res.std(ddof=1) / np.sqrt(n))


def tap_fixed_point(
    sol: PdeSolution, q: float, y_value: float, damping: float = 0.5, tol: float = 1e-12,
    max_iter: int = 10_000,
) -> float:
    """Solve s = ux(q, y - C(q) s) for s by damped iteration (exploration aid)."""
    C = onsager_coefficient(sol.mixture, sol.measure, q)
    s = 0.0
    for _ in range(max_iter):
        s_new = (1 - damping) * s + damping * sol.query_ux(q, y_value - C * s)
        if abs(s_new - s) < tol:
            return s_new
        s = s_new
    raise ConfigError("fixed-point iteration did not converge")
