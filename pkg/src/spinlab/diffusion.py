"""Coupled driving / cavity / local-field / magnetization processes.

Replicas with a prescribed ultrametric overlap matrix share Gaussian
increments while t is below their pairwise overlap and evolve independently
afterwards.  Coupling is exact: replicas in one coalescence cluster share a
single state array, so their histories are bitwise identical up to the split,
and clusters split only at grid times (the grid contains every overlap entry
and every atom).

Increments use the exact variance xi'(t+dt) - xi'(t); the drift integrates
xi''(t) m(t) over the step exactly and evaluates the slope field at the left
endpoint (Euler-Maruyama, weak order one).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .backend import get_kernels
from .errors import ConfigError
from .mixture import ParisiMeasure
from .parisi import PdeSolution
from .ultrametric import validate_ultrametric

DEFAULT_STEPS = 4000
REFINE_FACTOR = 4
REFINE_HALFWIDTH_STEPS = 10


def build_time_grid(
    measure: ParisiMeasure,
    steps: int = DEFAULT_STEPS,
    t_init: float = 0.0,
    t_end: float = 1.0,
    extra: Sequence[float] = (),
) -> np.ndarray:
    """Uniform grid of `steps` per unit time, refined near atoms.

    Always contains t_init, t_end, every atom and every value in `extra`
    falling inside the range.  Within +-10 base steps of an atom the step
    shrinks by REFINE_FACTOR.
    """
    if t_end < t_init - 1e-15:
        raise ConfigError(f"empty time range [{t_init}, {t_end}]")
    if t_end - t_init < 1e-15:
        return np.array([t_init])
    dt = 1.0 / steps
    base = np.arange(int(np.floor(t_init / dt)), int(np.ceil(t_end / dt)) + 1) * dt
    pieces = [base, np.asarray([t_init, t_end])]
    for q in measure.locations:
        w = REFINE_HALFWIDTH_STEPS * dt
        lo, hi = q - w, q + w
        fine = np.arange(int(np.floor(lo / (dt / REFINE_FACTOR))),
                         int(np.ceil(hi / (dt / REFINE_FACTOR))) + 1) * (dt / REFINE_FACTOR)
        pieces.append(fine)
        pieces.append(np.asarray([q]))
    if len(extra):
        pieces.append(np.asarray(extra, dtype=float))
    ts = np.concatenate(pieces)
    ts = ts[(ts >= t_init - 1e-12) & (ts <= t_end + 1e-12)]
    ts = np.unique(np.clip(ts, t_init, t_end))
    # drop near-duplicates from float noise
    keep = np.concatenate(([True], np.diff(ts) > 1e-13))
    return ts[keep]


def _partition(Q: np.ndarray, threshold: float):
    """Clusters {i,j : q_ij >= threshold}; ultrametricity makes this transitive."""
    d = Q.shape[0]
    labels = [-1] * d
    clusters = []
    for i in range(d):
        if labels[i] >= 0:
            continue
        members = [i]
        labels[i] = len(clusters)
        for j in range(i + 1, d):
            if labels[j] < 0 and Q[i, j] >= threshold - 1e-12:
                labels[j] = len(clusters)
                members.append(j)
        clusters.append(tuple(members))
    return clusters


@dataclass(frozen=True)
class EnsembleResult:
    """Checkpoint values of a path ensemble.

    X has shape (n_checkpoints, d, n_paths); M (same shape) is the slope
    field along the paths when requested.  brackets maps a replica pair to
    the running cavity-increment covariation at the checkpoints.
    """

    checkpoints: np.ndarray
    X: np.ndarray
    M: Optional[np.ndarray] = None
    brackets: dict = field(default_factory=dict)


def ensemble_paths(
    sol: PdeSolution,
    Q: np.ndarray,
    n_paths: int,
    checkpoints: Sequence[float],
    rng_seed=0,
    t_init: float = 0.0,
    t_end: float = 1.0,
    steps: int = DEFAULT_STEPS,
    x_init=None,
    bracket_pairs: Sequence[tuple] = (),
    record_magnetization: bool = False,
    block_steps: int = 64,
) -> EnsembleResult:
    """Evolve n_paths independent realizations of the coupled replica system.

    The local-field drift is xi''(t) m(t) ux(t, X_t); with x_init given the
    paths start there instead of at the external field h.
    """
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[0]
    measure, mixture = sol.measure, sol.mixture
    rng = np.random.default_rng(rng_seed)
    kern = get_kernels()

    checkpoints = np.asarray(sorted(checkpoints), dtype=float)
    if len(checkpoints) and (checkpoints[0] < t_init - 1e-12 or checkpoints[-1] > t_end + 1e-12):
        raise ConfigError("checkpoints outside the simulated range")
    splits = sorted({float(v) for v in Q[~np.eye(d, dtype=bool)] if t_init < v < t_end})
    ts = build_time_grid(measure, steps, t_init, t_end,
                         extra=tuple(splits) + tuple(checkpoints))

    # per-step coefficients
    xi1 = mixture.xi(ts, 1)
    sqs = np.sqrt(np.maximum(xi1[1:] - xi1[:-1], 0.0))
    ms = measure.cdf(ts[:-1])
    drifts = ms * (xi1[1:] - xi1[:-1])
    it0s = np.empty(len(ts) - 1, dtype=np.int64)
    tws = np.empty(len(ts) - 1)
    for k, t in enumerate(ts[:-1]):
        it0s[k], tws[k] = sol.time_bracket(float(t))

    # initial state
    if x_init is None:
        x_init = measure.h
    clusters = _partition(Q, ts[1] if len(ts) > 1 else np.inf)
    if np.isscalar(x_init):
        states = [np.full(n_paths, float(x_init)) for _ in clusters]
    else:
        arr = np.asarray(x_init, dtype=float)
        if arr.ndim == 1:
            if d != 1:
                raise ConfigError("1-D x_init requires a single replica")
            states = [arr.copy()]
        else:
            states = [arr[c[0]].copy() for c in clusters]

    pair_acc = {tuple(sorted(p)): np.zeros(n_paths) for p in bracket_pairs}
    n_cp = len(checkpoints)
    out_X = np.empty((n_cp, d, n_paths))
    out_M = np.empty((n_cp, d, n_paths)) if record_magnetization else None

    def record(icp: int):
        t_cp = checkpoints[icp]
        for ci, members in enumerate(clusters):
            xs = states[ci]
            for rep in members:
                out_X[icp, rep] = xs
            if record_magnetization:
                i0, w = sol.time_bracket(float(t_cp))
                m = kern.interp_ux(sol.ux, i0, w, xs, sol.x0, sol.dx)
                for rep in members:
                    out_M[icp, rep] = m

    # event times where we stop: checkpoints, splits, end
    events = np.unique(np.concatenate((checkpoints, np.asarray(splits), [ts[-1]])))
    cp_left = list(range(n_cp))
    if len(ts) == 1:
        for icp in range(n_cp):
            record(icp)
        return EnsembleResult(checkpoints=checkpoints, X=out_X, M=out_M,
                              brackets={p: np.array([a]) for p, a in pair_acc.items()})

    rep_to_cluster = {}

    def refresh_map():
        rep_to_cluster.clear()
        for ci, members in enumerate(clusters):
            for rep in members:
                rep_to_cluster[rep] = ci

    refresh_map()
    bracket_out = {p: np.empty((n_cp, n_paths)) for p in pair_acc}

    k = 0
    n_steps = len(ts) - 1
    for ev in events:
        # march all steps with t_{k+1} <= ev
        while k < n_steps and ts[k + 1] <= ev + 1e-13:
            kend = k
            while (
                kend < n_steps
                and ts[kend + 1] <= ev + 1e-13
                and kend - k < block_steps
            ):
                kend += 1
            blk = slice(k, kend)
            nblk = kend - k
            zs = []
            for ci in range(len(clusters)):
                z = rng.standard_normal((nblk, n_paths))
                zs.append(z)
                kern.sde_block(states[ci], z, sol.ux, it0s[blk], tws[blk],
                               drifts[blk], sqs[blk], sol.x0, sol.dx)
            if pair_acc:
                svar = (sqs[blk] ** 2)[:, None]
                for (i, j), acc in pair_acc.items():
                    zi = zs[rep_to_cluster[i]]
                    zj = zs[rep_to_cluster[j]]
                    acc += (svar * zi * zj).sum(axis=0)
            k = kend
        # record checkpoints that land here
        for icp in range(n_cp):
            if abs(checkpoints[icp] - ev) <= 1e-12:
                record(icp)
                for p, acc in pair_acc.items():
                    bracket_out[p][icp] = acc
        # split clusters if ev is a split time
        if any(abs(ev - s) <= 1e-12 for s in splits):
            nxt = ts[k + 1] if k < n_steps else np.inf
            new_clusters = _partition(Q, nxt)
            new_states = []
            for members in new_clusters:
                old_ci = rep_to_cluster[members[0]]
                src = states[old_ci]
                new_states.append(src if len(clusters[old_ci]) == len(members) else src.copy())
            clusters = new_clusters
            states = new_states
            refresh_map()

    return EnsembleResult(checkpoints=checkpoints, X=out_X, M=out_M, brackets=bracket_out)


@dataclass(frozen=True)
class PathBundle:
    """Full trajectories of one realization for d coupled replicas.

    Arrays have shape (d, len(ts)): B the driving process, Y the cavity field,
    X the local field, M the slope field along X.  Replicas i and j are
    bitwise identical for t <= q_ij.
    """

    Q: np.ndarray
    ts: np.ndarray
    B: np.ndarray
    Y: np.ndarray
    X: np.ndarray
    M: np.ndarray
    rng_seed: object
    measure: ParisiMeasure

    @property
    def d(self) -> int:
        return self.Q.shape[0]

    def grid_index(self, t: float) -> int:
        i = int(np.searchsorted(self.ts, t))
        if i >= len(self.ts) or abs(self.ts[i] - t) > 1e-12:
            raise ConfigError(f"t={t} is not a grid time of this bundle")
        return i


def simulate_bundle(
    sol: PdeSolution, Q: np.ndarray, steps: int = DEFAULT_STEPS, rng_seed=0
) -> PathBundle:
    """Simulate one realization of all four processes for d replicas."""
    if steps < 1000:
        raise ConfigError(f"steps must be >= 1000 for the default tolerances, got {steps}")
    Q = np.asarray(Q, dtype=float)
    rep = validate_ultrametric(Q, sol.measure)
    if not rep.valid:
        raise ConfigError(f"invalid overlap matrix: {rep.message}")
    d = Q.shape[0]
    measure, mixture = sol.measure, sol.mixture
    rng = np.random.default_rng(rng_seed)
    kern = get_kernels()

    splits = sorted({float(v) for v in Q[~np.eye(d, dtype=bool)] if 0.0 < v < 1.0})
    ts = build_time_grid(measure, steps, 0.0, 1.0, extra=tuple(splits))
    nt = len(ts)
    xi1 = mixture.xi(ts, 1)
    B = np.zeros((d, nt))
    Y = np.full((d, nt), measure.h)
    X = np.full((d, nt), measure.h)
    M = np.empty((d, nt))

    i0, w = sol.time_bracket(0.0)
    M[:, 0] = kern.interp_ux(sol.ux, i0, w, X[:, 0].copy(), sol.x0, sol.dx)
    for k in range(nt - 1):
        t0, t1 = ts[k], ts[k + 1]
        dvar = xi1[k + 1] - xi1[k]
        sq = np.sqrt(max(dvar, 0.0))
        sqt = np.sqrt(t1 - t0)
        m = measure.cdf(float(t0))
        clusters = _partition(Q, t1)
        z = rng.standard_normal(len(clusters))
        i0, w = sol.time_bracket(float(t0))
        ux_here = kern.interp_ux(sol.ux, i0, w, X[:, k].copy(), sol.x0, sol.dx)
        for ci, members in enumerate(clusters):
            for repl in members:
                B[repl, k + 1] = B[repl, k] + sqt * z[ci]
                Y[repl, k + 1] = Y[repl, k] + sq * z[ci]
                X[repl, k + 1] = X[repl, k] + m * dvar * ux_here[repl] + sq * z[ci]
        i1, w1 = sol.time_bracket(float(t1))
        M[:, k + 1] = kern.interp_ux(sol.ux, i1, w1, X[:, k + 1].copy(), sol.x0, sol.dx)
    return PathBundle(Q=Q, ts=ts, B=B, Y=Y, X=X, M=M, rng_seed=rng_seed, measure=measure)


def empirical_bracket(bundle: PathBundle, i: int, j: int) -> np.ndarray:
    """Running sum of products of cavity-field increments of replicas i, j.

    Returns a table aligned with bundle.ts (first entry 0).
    """
    if i == j:
        raise ConfigError("bracket requires two distinct replicas")
    dyi = np.diff(bundle.Y[i])
    dyj = np.diff(bundle.Y[j])
    return np.concatenate(([0.0], np.cumsum(dyi * dyj)))


def conditional_continuation(
    bundle: PathBundle, replica: int, q: float, n_branches: int, sol: PdeSolution, rng_seed=0
):
    """Freeze a replica's path up to q and re-run independent continuations.

    Returns (X_1 endpoints, tanh of the endpoints) over the branch ensemble.
    """
    idx = bundle.grid_index(q)
    x_q = float(bundle.X[replica, idx])
    if q >= 1.0 - 1e-15:
        x1 = np.full(n_branches, x_q)
        return x1, np.tanh(x1)
    res = ensemble_paths(
        sol,
        np.array([[bundle.measure.q_star]]),
        n_branches,
        checkpoints=[1.0],
        rng_seed=rng_seed,
        t_init=q,
        t_end=1.0,
        x_init=x_q,
    )
    x1 = res.X[0, 0]
    return x1, np.tanh(x1)
