import numpy as np
import pytest

from spinlab.mixture import MixtureSpec, ParisiMeasure
from spinlab.parisi import cole_hopf_levels, solve_pde


@pytest.fixture(scope="session")
def sk2_model():
    return MixtureSpec(terms=[(2, 1.0)]), ParisiMeasure(atoms=[(0.3, 0.5), (0.7, 0.5)], h=0.3)


@pytest.fixture(scope="session")
def sk2_solution(sk2_model):
    mixture, measure = sk2_model
    return solve_pde(mixture, measure)


@pytest.fixture(scope="session")
def sk2_levels(sk2_model):
    mixture, measure = sk2_model
    return cole_hopf_levels(mixture, measure)


@pytest.fixture(scope="session")
def rs_model():
    from spinlab.stats import rs_fixed_point

    mixture = MixtureSpec(terms=[(2, 0.5)])
    q_rs = rs_fixed_point(mixture, 0.3)
    return mixture, ParisiMeasure(atoms=[(q_rs, 1.0)], h=0.3), q_rs


@pytest.fixture(scope="session")
def rs_solution(rs_model):
    mixture, measure, _ = rs_model
    return solve_pde(mixture, measure)


def z_score(a_vals: np.ndarray, b_vals: np.ndarray) -> float:
    """z of the difference of two independent sample means."""
    na, nb = len(a_vals), len(b_vals)
    se = np.hypot(a_vals.std(ddof=1) / np.sqrt(na), b_vals.std(ddof=1) / np.sqrt(nb))
    return float((a_vals.mean() - b_vals.mean()) / se)
