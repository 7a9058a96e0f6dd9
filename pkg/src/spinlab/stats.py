"""Spin statistics by three routes: cascade Monte Carlo, backward tree
moments, and closed-form atom sums.

The Monte Carlo route samples an overlap matrix from a fresh cascade per
outer draw, then runs independent coupled path bundles per site on that
matrix; the estimator averages products of tanh of the local fields at the
top atom time.  The deterministic route transports moments backward with the
drifted one-dimensional generator, multiplying in slope powers at the marked
times.  Closed forms reduce the two- and three-replica statistics to atom
sums of single-path tree moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .diffusion import ensemble_paths
from .errors import ConfigError, DomainError
from .seeding import seed_sequence
from .mixture import MixtureSpec, ParisiMeasure
from .parisi import PdeSolution, log_cosh
from .quadrature import gauss_hermite
from .ultrametric import field_increments, leaf_fields, sample_cascade, sample_overlap_arrays

N_BATCHES = 30


@dataclass(frozen=True)
class MomentQuery:
    """Product of spins over replicas l = 1..q_replicas and site sets C_l."""

    q_replicas: int
    sets: tuple  # one tuple of site indices (1-based) per replica
    n_sites: int

    def __post_init__(self):
        sets = tuple(tuple(int(i) for i in c) for c in self.sets)
        object.__setattr__(self, "sets", sets)
        if len(sets) != self.q_replicas:
            raise ConfigError("need one site set per replica")
        if any(len(c) == 0 for c in sets):
            raise ConfigError("site sets must be nonempty")
        if any(i < 1 or i > self.n_sites for c in sets for i in c):
            raise ConfigError("site index out of range")
        if any(len(set(c)) != len(c) for c in sets):
            raise ConfigError("repeated site inside one replica set")


@dataclass(frozen=True)
class StatResult:
    value: float
    std_error: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.std_error < 0:
            raise ConfigError("std_error must be nonnegative")


@dataclass(frozen=True)
class StateEnsemble:
    """Spin/cavity-field pairs drawn from the state measure."""

    s: np.ndarray
    y: np.ndarray

    def __iter__(self):
        for si, yi in zip(self.s, self.y):
            yield StateSample(int(si), float(yi))


@dataclass(frozen=True)
class StateSample:
    s: int
    y: float


# ---------------------------------------------------------------------------
# cascade Monte Carlo route


def moment_mc(
    sol: PdeSolution,
    query: MomentQuery,
    K: int = 200,
    n_outer: int = 4000,
    n_paths: int = 8,
    rng_seed=0,
    steps: int = 2000,
) -> StatResult:
    """Monte Carlo spin moment via cascade-sampled overlaps and path bundles.

    Each outer draw contributes n_paths realizations; per realization every
    site gets an independent bundle on the drawn matrix.  The standard error
    uses 30 batch means over outer draws, so the overlap-law noise is counted.
    """
    meas = sol.measure
    d = query.q_replicas
    root = seed_sequence(rng_seed)
    s_overlap, s_paths = root.spawn(2)
    Qs = sample_overlap_arrays(meas, d, n_outer, K=K, rng_seed=s_overlap)
    keys = Qs.reshape(n_outer, -1).round(12)
    patterns, inverse = np.unique(keys, axis=0, return_inverse=True)
    batch_of_draw = np.arange(n_outer) % N_BATCHES

    batch_sum = np.zeros(N_BATCHES)
    batch_cnt = np.zeros(N_BATCHES, dtype=np.int64)
    seeds = s_paths.spawn(len(patterns))
    for ipat in range(len(patterns)):
        Qpat = patterns[ipat].reshape(d, d)
        draws = np.flatnonzero(inverse == ipat)
        n_real = len(draws) * n_paths
        prod = np.ones(n_real)
        for i_site, site_seed in enumerate(seeds[ipat].spawn(query.n_sites), start=1):
            used = any(i_site in c for c in query.sets)
            if not used:
                continue
            res = ensemble_paths(
                sol,
                Qpat,
                n_real,
                checkpoints=[meas.q_star],
                rng_seed=site_seed,
                t_end=meas.q_star,
                steps=steps,
            )
            tanh_x = np.tanh(res.X[0])  # (d, n_real)
            for l, sites in enumerate(query.sets):
                if i_site in sites:
                    prod = prod * tanh_x[l]
        bids = np.repeat(batch_of_draw[draws], n_paths)
        np.add.at(batch_sum, bids, prod)
        np.add.at(batch_cnt, bids, 1)
    means = batch_sum / np.maximum(batch_cnt, 1)
    value = float(batch_sum.sum() / batch_cnt.sum())
    se = float(means.std(ddof=1) / np.sqrt(N_BATCHES))
    return StatResult(
        value=value,
        std_error=se,
        method="cascade-mc",
        diagnostics={"n_patterns": float(len(patterns)), "n_realizations": float(batch_cnt.sum())},
    )


# ---------------------------------------------------------------------------
# backward tree-moment route


def tree_moment_pde(sol: PdeSolution, spec: Sequence[tuple]) -> float:
    """E of a product of slope-field powers along one path, by backward PDEs.

    ``spec`` is a sequence of (time, power) with strictly increasing times in
    [0, q_*] and integer powers >= 1.  Marching uses the drifted generator
    (diffusion plus 2 m(t) ux d/dx), implicit in both terms.
    """
    from .backend import get_kernels

    if not spec:
        raise ConfigError("need at least one (time, power) pair")
    times = [float(t) for t, _ in spec]
    powers = [int(k) for _, k in spec]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigError("times must be strictly increasing")
    meas, mix, grid = sol.measure, sol.mixture, sol.grid
    if times[0] < -1e-12 or times[-1] > meas.q_star + 1e-12:
        raise DomainError("moment times must lie in [0, q_*]")
    if any(k < 1 for k in powers):
        raise ConfigError("powers must be >= 1")
    kern = get_kernels()
    dx = sol.dx

    def ux_row(t: float) -> np.ndarray:
        i, w = sol.time_bracket(t)
        return sol.ux[i] + w * (sol.ux[i + 1] - sol.ux[i])

    w_slice = ux_row(times[-1]) ** powers[-1]
    marks = list(zip(times, powers))
    t_hi = times[-1]
    for t_lo, k_lo in list(reversed(marks))[1:] + [(0.0, 0)]:
        if t_hi - t_lo > 1e-14:
            knots = np.unique(
                np.concatenate(([t_lo, t_hi], meas.locations[(meas.locations > t_lo)
                                                             & (meas.locations < t_hi)]))
            )
            ts = [np.array([t_lo])]
            for a, b in zip(knots[:-1], knots[1:]):
                nsub = max(1, int(np.ceil((b - a) / grid.dt_max)))
                ts.append(np.linspace(a, b, nsub + 1)[1:])
            ts = np.concatenate(ts)
            xi1 = mix.xi(ts, 1)
            a_steps = ((xi1[1:] - xi1[:-1]) / 2.0)[::-1].copy()
            m_steps = meas.cdf(ts[:-1])[::-1].copy()
            it0s = np.empty(len(ts) - 1, dtype=np.int64)
            tws = np.empty(len(ts) - 1)
            for i, t in enumerate(ts[:-1][::-1]):
                it0s[i], tws[i] = sol.time_bracket(float(t))
            w_slice = kern.advect_march(w_slice, a_steps, m_steps, it0s, tws, sol.ux, dx)
        if k_lo > 0:
            w_slice = w_slice * ux_row(t_lo) ** k_lo
        t_hi = t_lo
    return float(np.interp(meas.h, sol.xs, w_slice))


# ---------------------------------------------------------------------------
# closed forms and cross-route wrappers


def two_spin(
    sol: PdeSolution,
    K: int = 200,
    n_outer: int = 4000,
    n_paths: int = 8,
    rng_seed=0,
    steps: int = 2000,
):
    """Pair statistic by all three routes.

    (a) atom-weighted tree moments of the squared slope; (b) cascade Monte
    Carlo; (c) the atom mean of the overlap itself, valid when the measure is
    self-consistent (squared-slope moment equals q on every atom); residuals
    are reported either way.
    """
    meas = sol.measure
    locs, masses = meas.locations, meas.masses
    sq = np.array([tree_moment_pde(sol, [(float(q), 2)]) for q in locs])
    residuals = np.abs(sq - locs)
    a = StatResult(
        value=float(np.dot(masses, sq)),
        std_error=0.0,
        method="pde-tree",
        diagnostics={f"ux2_at_{q:g}": float(v) for q, v in zip(locs, sq)},
    )
    query = MomentQuery(q_replicas=2, sets=((1,), (1,)), n_sites=1)
    b = moment_mc(sol, query, K=K, n_outer=n_outer, n_paths=n_paths,
                  rng_seed=rng_seed, steps=steps)
    applicable = bool(residuals.max() <= 1e-2)
    c = StatResult(
        value=float(np.dot(masses, locs)),
        std_error=0.0,
        method="closed-form",
        diagnostics={
            **{f"self_consistency_residual_at_{q:g}": float(r) for q, r in zip(locs, residuals)},
            "applicable": float(applicable),
        },
    )
    return a, b, c


def three_spin(
    sol: PdeSolution,
    K: int = 200,
    n_outer: int = 4000,
    n_paths: int = 8,
    rng_seed=0,
    steps: int = 2000,
):
    """Three-replica single-site statistic: closed form and direct Monte Carlo.

    The closed form sums tree moments over atom pairs: off-diagonal pairs
    carry weight (3/4) mass_j mass_k on E[ux(max)^2 ux(min)]; the diagonal
    term carries weight mass_k (cdf_k + mass_k) / 2 on E[ux(q_k)^3], which is
    what the replica identities give for coinciding overlaps (a uniform 3/4
    weight fails already for a single atom, where the statistic is exactly
    the third slope moment; that variant is reported in the diagnostics).
    """
    meas = sol.measure
    locs, masses = meas.locations, meas.masses
    cdfs = meas.cdf_values()
    r = meas.r
    pair_vals = {}
    for j in range(r):
        for k in range(j, r):
            if j == k:
                pair_vals[(j, j)] = tree_moment_pde(sol, [(float(locs[j]), 3)])
            else:
                pair_vals[(j, k)] = tree_moment_pde(
                    sol, [(float(locs[j]), 1), (float(locs[k]), 2)]
                )
    off = sum(
        2.0 * masses[j] * masses[k] * pair_vals[(j, k)] for j in range(r) for k in range(j + 1, r)
    )
    diag_identity = sum(
        masses[k] * (cdfs[k] + masses[k]) / 2.0 * pair_vals[(k, k)] for k in range(r)
    )
    diag_uniform = sum(0.75 * masses[k] ** 2 * pair_vals[(k, k)] for k in range(r))
    value = 0.75 * off + diag_identity
    a = StatResult(
        value=float(value),
        std_error=0.0,
        method="pde-tree",
        diagnostics={
            "uniform_diagonal_value": float(0.75 * off + diag_uniform),
            "diagonal_term": float(diag_identity),
            "offdiagonal_term": float(0.75 * off),
        },
    )
    query = MomentQuery(q_replicas=3, sets=((1,), (1,), (1,)), n_sites=1)
    b = moment_mc(sol, query, K=K, n_outer=n_outer, n_paths=n_paths,
                  rng_seed=rng_seed, steps=steps)
    return a, b


def state_sample(f: float, sol: PdeSolution, n: int, rng_seed=0) -> StateEnsemble:
    """Draw (spin, cavity field) pairs from the state measure at boundary f.

    Exact mixture representation: the spin is +1 with probability
    (1 + tanh f)/2, then y ~ Normal(f + s v, v) with v the slope variance
    remaining above the top atom.  v = 0 degenerates to y = f.
    """
    mix, meas = sol.mixture, sol.measure
    v = float(mix.xi(1.0, 1) - mix.xi(meas.q_star, 1))
    assert v >= -1e-15, "remaining variance cannot be negative"
    v = max(v, 0.0)
    rng = np.random.default_rng(rng_seed)
    s = np.where(rng.random(n) < (1.0 + np.tanh(f)) / 2.0, 1, -1)
    if v == 0.0:
        y = np.full(n, float(f))
    else:
        y = f + s * v + np.sqrt(v) * rng.standard_normal(n)
    return StateEnsemble(s=s, y=y)


def rs_fixed_point(
    mixture: MixtureSpec, h: float, tol: float = 1e-13, max_iter: int = 1000, quad_order: int = 96
) -> float:
    """Solve q = E tanh^2(h + z sqrt(xi'(q))) by damped fixed-point iteration."""
    z, w = gauss_hermite(quad_order)
    q = 0.5
    for _ in range(max_iter):
        g = float(np.dot(w, np.tanh(h + z * np.sqrt(mixture.xi(q, 1))) ** 2))
        q_new = 0.5 * q + 0.5 * g
        if abs(q_new - q) < tol:
            return q_new
        q = q_new
    raise ConfigError(f"fixed-point iteration did not converge (last q={q})")


# ---------------------------------------------------------------------------
# cascade-formula consistency (ratio form vs tilted form)


@dataclass(frozen=True)
class FormulaCheck:
    ratio_form: float
    tilted_form: float
    se_ratio: float
    se_tilted: float
    n_samples: int

    @property
    def se(self) -> float:
        return float(np.hypot(self.se_ratio, self.se_tilted))

    @property
    def z(self) -> float:
        return (self.ratio_form - self.tilted_form) / self.se if self.se > 0 else 0.0

    @property
    def passed(self) -> bool:
        return abs(self.ratio_form - self.tilted_form) <= 3.0 * self.se


def rpc_formula_check(
    mixture: MixtureSpec,
    meas: ParisiMeasure,
    query: MomentQuery,
    n_samples: int = 2000,
    K: int = 200,
    rng_seed=0,
) -> FormulaCheck:
    """Spin-moment formula two ways on the same cascade law.

    Ratio form: expectation over cascades of
        prod_l [ sum_a w_a (prod_{i in C_l} tanh g_i(a)) prod_{i<=n} cosh g_i(a) ]
               / [ sum_a w_a prod_{i<=n} cosh g_i(a) ]^q ;
    tilted form: expectation of prod_l sum_a w_a prod_{i in C_l} tanh g'_i(a),
    with independently tilted fields per site.
    """
    from .parisi import cole_hopf_levels
    from .tilted import build_tilt_tables, sample_tilted, tilted_leaf_fields

    levels = cole_hopf_levels(mixture, meas)
    tables = build_tilt_tables(levels)
    root = seed_sequence(rng_seed)
    nq = query.q_replicas
    n_sites = query.n_sites
    ratio_vals = np.empty(n_samples)
    tilt_vals = np.empty(n_samples)
    for s_idx, seed in enumerate(root.spawn(n_samples)):
        rng = np.random.default_rng(seed)
        casc = sample_cascade(meas, K=K, rng_seed=rng)
        w = casc.leaf_weights
        fields = []
        for _ in range(n_sites):
            eta = tuple(rng.standard_normal(nn) for nn in casc.sizes)
            fields.append(leaf_fields(casc, mixture, eta=eta))
        log_cosh_all = sum(log_cosh(g) for g in fields)
        logw_t = np.log(w) + log_cosh_all
        shift = logw_t.max()
        wt = np.exp(logw_t - shift)
        denom = wt.sum()
        num = 1.0
        for sites in query.sets:
            tanh_prod = np.ones(casc.n_leaves)
            for i in sites:
                tanh_prod = tanh_prod * np.tanh(fields[i - 1])
            num *= float((wt * tanh_prod).sum() / denom)
        ratio_vals[s_idx] = num
        tfields = []
        for _ in range(n_sites):
            tc = sample_tilted(casc, levels, rng_seed=rng, tables=tables)
            tfields.append(tilted_leaf_fields(tc, mixture))
        val = 1.0
        for sites in query.sets:
            tanh_prod = np.ones(casc.n_leaves)
            for i in sites:
                tanh_prod = tanh_prod * np.tanh(tfields[i - 1])
            val *= float((w * tanh_prod).sum())
        tilt_vals[s_idx] = val
    return FormulaCheck(
        ratio_form=float(ratio_vals.mean()),
        tilted_form=float(tilt_vals.mean()),
        se_ratio=float(ratio_vals.std(ddof=1) / np.sqrt(n_samples)),
        se_tilted=float(tilt_vals.std(ddof=1) / np.sqrt(n_samples)),
        n_samples=n_samples,
    )
