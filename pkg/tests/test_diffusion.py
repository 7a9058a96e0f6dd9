import numpy as np
import pytest

from spinlab.diffusion import (
    build_time_grid,
    conditional_continuation,
    empirical_bracket,
    ensemble_paths,
    simulate_bundle,
)
from spinlab.errors import ConfigError
from spinlab.mixture import MixtureSpec, ParisiMeasure
from spinlab.parisi import solve_pde
from spinlab.tap import onsager_coefficient

from conftest import z_score


def test_time_grid_contains_required_points(sk2_model):
    _, measure = sk2_model
    ts = build_time_grid(measure, steps=500, extra=(0.123, 0.7))
    for t in (0.0, 1.0, 0.3, 0.7, 0.123):
        assert np.min(np.abs(ts - t)) < 1e-13
    assert np.all(np.diff(ts) > 0)


def test_coupling_bitwise_and_divergence(sk2_solution):
    Q = np.array([[0.7, 0.3], [0.3, 0.7]])
    b = simulate_bundle(sk2_solution, Q, steps=1000, rng_seed=5)
    i = b.grid_index(0.3)
    for arr in (b.B, b.Y, b.X, b.M):
        assert np.array_equal(arr[0, : i + 1], arr[1, : i + 1])
    assert not np.allclose(b.X[0, i + 10 :], b.X[1, i + 10 :])


def test_full_coupling_at_qstar(sk2_solution):
    Q = np.array([[0.7, 0.7], [0.7, 0.7]])
    b = simulate_bundle(sk2_solution, Q, steps=1000, rng_seed=6)
    i = b.grid_index(0.7)
    assert np.array_equal(b.X[0, : i + 1], b.X[1, : i + 1])


def test_cavity_equals_local_below_single_atom():
    """Zero drift below the only atom: X and Y coincide exactly there."""
    mix = MixtureSpec(terms=[(2, 1.0)])
    meas = ParisiMeasure(atoms=[(0.6, 1.0)], h=0.3)
    sol = solve_pde(mix, meas)
    b = simulate_bundle(sol, np.array([[0.6]]), steps=1000, rng_seed=7)
    i = b.grid_index(0.6)
    assert np.array_equal(b.X[0, : i + 1], b.Y[0, : i + 1])
    assert not np.allclose(b.X[0, -1], b.Y[0, -1])


def test_magnetization_matches_slope_field(sk2_solution):
    b = simulate_bundle(sk2_solution, np.array([[0.7]]), steps=1000, rng_seed=8)
    recomputed = np.array(
        [sk2_solution.query_ux(float(t), float(x)) for t, x in zip(b.ts, b.X[0])]
    )
    assert np.abs(b.M[0] - recomputed).max() < 1e-12


def test_step_floor(sk2_solution):
    with pytest.raises(ConfigError):
        simulate_bundle(sk2_solution, np.array([[0.7]]), steps=100, rng_seed=0)


def test_martingale_mean(sk2_solution):
    n = 40_000
    cps = [0.2, 0.5, 0.9]
    res = ensemble_paths(sk2_solution, np.array([[0.7]]), n, cps, rng_seed=9,
                         record_magnetization=True)
    m0 = sk2_solution.query_ux(0.0, 0.3)
    for icp in range(len(cps)):
        m = res.M[icp, 0]
        z = abs(m.mean() - m0) / (m.std(ddof=1) / np.sqrt(n))
        assert z <= 3.0, (cps[icp], z)


def test_bracket_independent_and_coupled(sk2_solution):
    mix = sk2_solution.mixture
    n = 20_000
    # q12 = 0: independent increments, bracket stays near zero
    res0 = ensemble_paths(sk2_solution, np.array([[0.7, 0.0], [0.0, 0.7]]), n,
                          [0.5, 1.0], rng_seed=10, bracket_pairs=[(0, 1)])
    tab = res0.brackets[(0, 1)]
    for icp in range(2):
        z = abs(tab[icp].mean()) / (tab[icp].std(ddof=1) / np.sqrt(n))
        assert z <= 3.0
    # q12 = 0.3: bracket tracks xi' below the meet and freezes above
    res = ensemble_paths(sk2_solution, np.array([[0.7, 0.3], [0.3, 0.7]]), n,
                         [0.15, 0.3, 0.8], rng_seed=11, bracket_pairs=[(0, 1)])
    tab = res.brackets[(0, 1)]
    for icp, t in enumerate([0.15, 0.3, 0.8]):
        target = float(mix.xi(min(t, 0.3), 1))
        z = abs(tab[icp].mean() - target) / (tab[icp].std(ddof=1) / np.sqrt(n))
        assert z <= 3.0, (t, z)
    # per-bundle table is constant after the meet
    b = simulate_bundle(sk2_solution, np.array([[0.7, 0.3], [0.3, 0.7]]), steps=1000,
                        rng_seed=12)
    table = empirical_bracket(b, 0, 1)
    i = b.grid_index(0.3)
    assert np.all(table[i:] == table[i])
    with pytest.raises(ConfigError):
        empirical_bracket(b, 1, 1)


def test_conditional_continuation_edge_and_martingale(sk2_solution):
    b = simulate_bundle(sk2_solution, np.array([[0.7]]), steps=1000, rng_seed=13)
    # q = 1: continuations are the frozen endpoint
    x1, s1 = conditional_continuation(b, 0, 1.0, 50, sk2_solution, rng_seed=14)
    assert np.all(x1 == b.X[0, -1])
    # q = q_*: mean tanh(X_1) is the slope field at the frozen point
    q = 0.7
    idx = b.grid_index(q)
    x1, s1 = conditional_continuation(b, 0, q, 40_000, sk2_solution, rng_seed=15)
    target_s = sk2_solution.query_ux(q, float(b.X[0, idx]))
    z = abs(s1.mean() - target_s) / (s1.std(ddof=1) / np.sqrt(len(s1)))
    assert z <= 3.0, z
    # mean X_1 follows the frozen point plus the correction integral
    target_y = float(b.X[0, idx]) + onsager_coefficient(
        sk2_solution.mixture, sk2_solution.measure, q
    ) * target_s
    z = abs(x1.mean() - target_y) / (x1.std(ddof=1) / np.sqrt(len(x1)))
    assert z <= 3.0, z


def test_invalid_matrix_rejected(sk2_solution):
    with pytest.raises(ConfigError):
        simulate_bundle(sk2_solution, np.array([[0.7, 0.5], [0.5, 0.7]]), steps=1000,
                        rng_seed=0)
