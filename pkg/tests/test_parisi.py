import numpy as np
import pytest

from spinlab.errors import ConfigError, ExtrapolationError
from spinlab.mixture import MixtureSpec, ParisiMeasure
from spinlab.parisi import (
    PdeGrid,
    cole_hopf_levels,
    log_cosh,
    query_ux,
    solve_pde,
)
from spinlab.quadrature import gauss_hermite


def test_grid_validation():
    with pytest.raises(ConfigError):
        PdeGrid(x_halfwidth=8.0, nx=301)
    with pytest.raises(ConfigError):
        PdeGrid(x_halfwidth=8.0, nx=400)
    grid = PdeGrid(x_halfwidth=6.0)
    with pytest.raises(ConfigError):
        grid.validate_for(ParisiMeasure(atoms=[(0.5, 1.0)], h=0.5))


def test_terminal_slice_exact(sk2_solution):
    xs = sk2_solution.xs
    assert np.array_equal(sk2_solution.u[-1], log_cosh(xs))
    assert sk2_solution.u[-1][len(xs) // 2] == 0.0  # log cosh(0)


def test_plateau_profile_analytic(sk2_solution):
    """Above the top atom the solution is log cosh plus a time constant."""
    mix, meas = sk2_solution.mixture, sk2_solution.measure
    for t_req in (0.7, 0.85, 1.0):
        i = int(np.searchsorted(sk2_solution.ts, t_req))
        t = float(sk2_solution.ts[i])  # nearest stored slice at or above t_req
        offset = (mix.xi(1.0, 1) - mix.xi(t, 1)) / 2.0
        exact = log_cosh(sk2_solution.xs) + offset
        assert np.abs(sk2_solution.u[i] - exact).max() < 5e-5
        assert np.abs(sk2_solution.ux[i] - np.tanh(sk2_solution.xs)).max() < 1e-4


def test_heat_equation_oracle_below_single_atom():
    """With one atom the region below it is a pure Gaussian average."""
    mix = MixtureSpec(terms=[(2, 1.0)])
    meas = ParisiMeasure(atoms=[(0.6, 1.0)], h=0.0)
    sol = solve_pde(mix, meas)
    z, w = gauss_hermite(96)
    i_atom = np.searchsorted(sol.ts, 0.6)
    for t in (0.0, 0.3):
        var = mix.xi(0.6, 1) - mix.xi(t, 1)
        i_t = np.searchsorted(sol.ts, t)
        for x in (-1.5, 0.0, 0.8, 3.0):
            shifted = x + z * np.sqrt(var)
            oracle = float(np.dot(w, np.interp(shifted, sol.xs, sol.u[i_atom])))
            assert abs(sol.query_u(t, x) - oracle) < 5e-4
        assert sol.ts[i_t] == t


def test_level_bridge(sk2_solution, sk2_levels):
    """Level functions match the solver at the atom times."""
    xs = np.linspace(-3.0, 3.0, 31)
    for p, t in ((0, 0.0), (1, 0.3), (2, 0.7)):
        pde = np.array([sk2_solution.query_u(t, float(x)) for x in xs])
        assert np.abs(sk2_levels.evaluate(p, xs) - pde).max() < 5e-3


def test_level_oracle_three_atoms():
    mix = MixtureSpec(terms=[(2, 1.0), (3, 0.4)])
    meas = ParisiMeasure(atoms=[(0.2, 0.3), (0.5, 0.3), (0.8, 0.4)], h=0.25)
    sol = solve_pde(mix, meas)
    levels = cole_hopf_levels(mix, meas)
    assert abs(levels.evaluate(0, meas.h) - sol.query_u(0.0, meas.h)) <= 5e-3


def test_level_recursion_limits():
    """Zero exponent averages plainly; unit exponent is the plain log-average."""
    from spinlab.parisi import _gh_level_step

    s = np.linspace(-6, 6, 201)
    vals = np.tanh(s) + 0.1 * s
    z, w = gauss_hermite(96)
    delta = 0.5
    plain = np.array(
        [np.dot(w, np.interp(si + z * np.sqrt(delta), s, vals)) for si in s[50:-50]]
    )
    out0 = _gh_level_step(vals, s, delta, 0.0, 96)
    assert np.abs(out0[50:-50] - plain).max() < 1e-3
    out1 = _gh_level_step(vals, s, delta, 1.0, 96)
    logavg = np.array(
        [np.log(np.dot(w, np.exp(np.interp(si + z * np.sqrt(delta), s, vals)))) for si in s[50:-50]]
    )
    assert np.abs(out1[50:-50] - logavg).max() < 1e-3


def test_query_ux_examples(sk2_solution):
    assert query_ux(sk2_solution, 1.0, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert query_ux(sk2_solution, 0.7, 2.0) == pytest.approx(np.tanh(2.0), abs=1e-4)
    # on-node query returns the stored value
    i, j = 5, 100
    t, x = float(sk2_solution.ts[i]), float(sk2_solution.xs[j])
    assert query_ux(sk2_solution, t, x) == pytest.approx(sk2_solution.ux[i, j], abs=1e-13)
    with pytest.raises(ExtrapolationError):
        query_ux(sk2_solution, 0.5, sk2_solution.grid.x_halfwidth + 1.0)


def test_ux_bounds_and_monotonicity(sk2_solution):
    assert np.all(np.abs(sk2_solution.ux) < 1.0)
    assert np.all(np.diff(sk2_solution.ux, axis=1) > 0.0)


def test_grid_refinement(sk2_model):
    """Halving dx and dt moves u(0,h) by no more than 4x the oracle tolerance."""
    mixture, measure = sk2_model
    coarse = solve_pde(mixture, measure, PdeGrid(8.3, nx=801, dt_max=4e-4, store_dt=2e-3))
    fine = solve_pde(mixture, measure, PdeGrid(8.3, nx=1601, dt_max=2e-4, store_dt=2e-3))
    d = abs(coarse.query_u(0.0, measure.h) - fine.query_u(0.0, measure.h))
    assert d <= 4 * 5e-3


def test_step_size_guard(sk2_model):
    mixture, measure = sk2_model
    with pytest.raises(ConfigError):
        solve_pde(mixture, measure, PdeGrid(8.3, nx=801, dt_max=0.2))


def test_atom_at_zero():
    mix = MixtureSpec(terms=[(2, 1.0)])
    meas = ParisiMeasure(atoms=[(0.0, 0.4), (0.5, 0.6)], h=0.2)
    sol = solve_pde(mix, meas)
    levels = cole_hopf_levels(mix, meas)
    assert abs(levels.evaluate(0, 0.2) - sol.query_u(0.0, 0.2)) <= 5e-3
    # level 0 and level 1 coincide when the first atom sits at zero
    s = np.linspace(-2, 2, 11)
    assert np.abs(levels.evaluate(0, s) - levels.evaluate(1, s)).max() < 1e-12
