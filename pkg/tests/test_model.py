import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfdesign import model as m


def test_s1_posterior_moments(s1):
    post = m.analytic_posterior(s1)
    np.testing.assert_allclose(post.mean, [0.0002, -19.9998, 19.9998], atol=1e-3)
    np.testing.assert_allclose(np.sqrt(np.diag(post.covariance)), [1.414, 316.2, 316.2], rtol=2e-3)


def test_s1_oracle_argmax_and_psi(s1):
    d = m.grid_search_optimum(s1, 0.01)
    assert d.points == (1.0,)
    assert m.db_criterion(s1, [1.0]) == pytest.approx(4.0, rel=1e-4)


def test_s2_two_argmax(s2):
    grid = m.grid_points(s2, 0.05)
    logdet = np.linalg.slogdet(s2.information(grid))[1]
    best = grid[m.argmax_ties(logdet)]
    assert sorted(map(tuple, best)) == [(0.0, 1.0), (1.0, 0.0)]


def test_expected_utility_closed_form_value(s1):
    assert m.analytic_expected_utility(s1, [1.0]) == pytest.approx(-4.6034, abs=1e-3)
    assert m.expected_log_prior(s1) == pytest.approx(-16.31, abs=0.01)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=3),
       st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_precision_additivity(points, zs):
    """Posterior precision equals prior precision plus data information."""
    sc = m.s1_quadratic()
    z = np.asarray(zs[:len(points)])
    post = m.analytic_updated_posterior(sc, None, z, np.asarray(points))
    F = m.design_matrix(np.asarray(points))
    expected = (F.T @ F + sc.L + sc.R) / sc.sigma2
    np.testing.assert_allclose(post.precision, expected, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(sc.information(np.asarray(points)), F.T @ F + sc.L + sc.R,
                               rtol=1e-12)


def test_sequential_update_matches_batch(s1, rng):
    z = rng.normal(size=2)
    both = m.analytic_updated_posterior(s1, None, z, np.array([0.3, -0.4]))
    y2 = m.ObservationSet(np.r_[s1.y_vec, z[0]], np.r_[s1.prior_xi, 0.3])
    seq = m.analytic_updated_posterior(s1, y2, z[1:], np.array([-0.4]))
    assert both == seq


def test_gaussian_law_validation():
    with pytest.raises(m.ModelError, match="positive definite"):
        m.GaussianLaw(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(m.ModelError, match="symmetric"):
        m.GaussianLaw(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(m.ModelError, match="does not match"):
        m.GaussianLaw(np.zeros(3), np.eye(2))


def test_gaussian_logpdf_matches_scipy(rng):
    from scipy import stats

    A = rng.normal(size=(3, 3))
    law = m.GaussianLaw(rng.normal(size=3), A @ A.T + np.eye(3))
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose(law.logpdf(x),
                               stats.multivariate_normal(law.mean, law.covariance).logpdf(x))


def test_design_bounds():
    with pytest.raises(m.ModelError, match="outside"):
        m.Design((1.5,))
    assert m.Design((0.5, -1.0)).n == 2


def test_observation_length_mismatch():
    with pytest.raises(m.ModelError):
        m.ObservationSet([1.0, 2.0], [0.0])


def test_simulator_view_has_no_density(s1):
    v = m.simulator_view(s1)
    assert not hasattr(v, "log_density")
    assert s1.has_density


def test_simulate_moments(s1, rng):
    theta = np.array([1.0, 2.0, 3.0])
    z = s1.simulate(np.broadcast_to(theta, (200_000, 3)), np.array([0.5]), rng)
    assert z.mean() == pytest.approx(1 + 1 + 0.75, abs=0.02)
    assert z.std() == pytest.approx(math.sqrt(2.0), rel=0.01)


def test_grid_cap(s1):
    with pytest.raises(m.ModelError, match="grid too large"):
        m.grid_points(s1, 1e-7)


def test_scenario_config_roundtrip(s2):
    again = m.scenario_from_config(s2.snapshot())
    np.testing.assert_allclose(again.R, s2.R)
    assert again.n == 2


def test_scenario_config_rejects_unknown():
    with pytest.raises(m.ModelError, match="unknown"):
        m.scenario_from_config({"model": {"sigma2": 1.0, "bogus": 1}})
    with pytest.raises(m.ModelError):
        m.scenario_from_config({"model": {"sigma2": -1.0}})
