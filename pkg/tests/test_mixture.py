import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinlab.errors import ConfigError, DomainError
from spinlab.mixture import MixtureSpec, ParisiMeasure, measure_cdf, theta_eval, xi_eval


def test_xi_pure_two_spin_values():
    spec = MixtureSpec(terms=[(2, 1.0)])
    assert xi_eval(spec, 0.5, 0) == pytest.approx(0.25)
    assert xi_eval(spec, 0.123, 2) == pytest.approx(2.0)
    assert xi_eval(spec, -0.8, 2) == pytest.approx(2.0)


def test_xi_mixed_derivative():
    spec = MixtureSpec(terms=[(2, 1.0), (3, 0.5)])
    assert xi_eval(spec, 1.0, 1) == pytest.approx(2.0 + 0.75)


def test_xi_domain_error():
    spec = MixtureSpec(terms=[(2, 1.0)])
    with pytest.raises(DomainError):
        xi_eval(spec, 1.2, 0)
    with pytest.raises(DomainError):
        xi_eval(spec, 0.5, 3)


def test_theta_values():
    assert theta_eval(MixtureSpec(terms=[(2, 1.0)]), 0.5) == pytest.approx(0.25)
    assert theta_eval(MixtureSpec(terms=[(2, 1.0), (4, 0.3)]), 0.0) == pytest.approx(0.0)
    assert theta_eval(MixtureSpec(terms=[(3, 1.0)]), 1.0) == pytest.approx(2.0)


def test_measure_cdf_right_continuous():
    m = ParisiMeasure(atoms=[(0.4, 1.0)], h=0.0)
    assert measure_cdf(m, 0.39) == 0.0
    assert measure_cdf(m, 0.4) == 1.0
    m2 = ParisiMeasure(atoms=[(0.2, 0.3), (0.6, 0.7)], h=0.0)
    assert measure_cdf(m2, 0.5) == pytest.approx(0.3)
    assert m2.q_star == 0.6


def test_measure_validation():
    with pytest.raises(ConfigError):
        ParisiMeasure(atoms=[(0.5, 0.5), (0.3, 0.5)])  # not increasing
    with pytest.raises(ConfigError):
        ParisiMeasure(atoms=[(0.5, 0.9)])  # mass deficit beyond tolerance
    with pytest.raises(ConfigError):
        ParisiMeasure(atoms=[(0.2, 0.5), (0.2, 0.5)])  # duplicate location
    with pytest.raises(ConfigError):
        ParisiMeasure(atoms=[(1.2, 1.0)])  # out of range


def test_mixture_validation():
    with pytest.raises(ConfigError):
        MixtureSpec(terms=[])
    with pytest.raises(ConfigError):
        MixtureSpec(terms=[(1, 1.0)])
    with pytest.raises(ConfigError):
        MixtureSpec(terms=[(2, 0.0)])
    with pytest.raises(ConfigError):
        MixtureSpec(terms=[(3, 1.0), (2, 1.0)])


@given(
    st.lists(
        st.tuples(st.integers(2, 6), st.floats(0.0, 2.0)),
        min_size=1,
        max_size=4,
        unique_by=lambda t: t[0],
    ).filter(lambda ts: any(b > 0 for _, b in ts)),
    st.floats(0.0, 1.0),
)
@settings(max_examples=60, deadline=None)
def test_xi_monotone_and_theta_nonnegative(terms, t):
    spec = MixtureSpec(terms=sorted(terms))
    xs = np.linspace(0.0, 1.0, 11)
    for order in (0, 1, 2):
        vals = spec.xi(xs, order)
        assert np.all(vals >= -1e-12)
        assert np.all(np.diff(vals) >= -1e-12)
    assert spec.theta(t) >= -1e-12
    assert spec.theta(0.0) == pytest.approx(0.0)


@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=5, unique=True))
@settings(max_examples=60, deadline=None)
def test_cdf_step_structure(locs):
    locs = sorted(locs)
    masses = np.ones(len(locs)) / len(locs)
    total = float(masses.sum())
    masses[-1] += 1.0 - total  # exact unit mass in floats
    m = ParisiMeasure(atoms=list(zip(locs, masses)), h=0.0)
    ts = np.linspace(0, 1, 101)
    vals = m.cdf(ts)
    assert np.all(np.diff(vals) >= -1e-15)
    assert m.cdf(1.0) == pytest.approx(1.0, abs=1e-12)
    assert m.cdf(locs[0] - 1e-9) == 0.0
