import numpy as np
import pytest

from lfdesign import model as m
from lfdesign.abc import ABCKernel, PosteriorParticleSet
from lfdesign.sources import analytic_posterior_source
from lfdesign.utility import (CallableUtility, ShannonUtility, UtilityError, UtilitySpec,
                              enforce_positive, estimate_expected_utility, fill_positive,
                              kld_gaussians, particle_summary_utility, shannon_utility,
                              update_posterior_particles)


def test_spec_validation():
    with pytest.raises(ValueError, match="kind"):
        UtilitySpec(kind="nope")
    with pytest.raises(ValueError, match="shift"):
        UtilitySpec(positivity="shift", shift=0.0)
    with pytest.raises(ValueError):
        UtilitySpec(kld_baseline="other")


@pytest.mark.parametrize("kind", ["shannon-log-ratio", "shannon-log-posterior"])
def test_batched_matches_explicit_laws(s2, rng, kind):
    util = ShannonUtility(s2, kind)
    designs = rng.uniform(-1, 1, size=(4, 2))
    cache = util.prepare(designs)
    rows = np.array([0, 1, 2, 3, 3, 1])
    theta = analytic_posterior_source(s2).sample(rng, rows.size)
    z = s2.simulate(theta, designs[rows], rng)
    got = util.evaluate(cache, rows, z, theta)
    for i, r in enumerate(rows):
        post = m.analytic_updated_posterior(s2, None, z[i], designs[r])
        ref = post.logpdf(theta[i])
        if kind == "shannon-log-ratio":
            ref -= s2.prior.logpdf(theta[i])
            assert ref == pytest.approx(shannon_utility(s2, z[i], None, designs[r], theta[i]))
        assert got[i] == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_kld_kind_matches_closed_form(s1, rng):
    util = ShannonUtility(s1, "kld-updated-vs-prior")
    z = np.array([[3.0]])
    d = np.array([[0.25]])
    got = util.evaluate(util.prepare(d), np.array([0]), z, np.zeros((1, 3)))[0]
    post = m.analytic_updated_posterior(s1, None, z[0], d[0])
    assert got == pytest.approx(kld_gaussians(post, s1.prior), rel=1e-8)


def test_kld_identity_and_positivity(rng):
    law = m.GaussianLaw(np.ones(2), np.eye(2) * 3)
    assert kld_gaussians(law, law) == pytest.approx(0.0, abs=1e-12)
    other = m.GaussianLaw(np.zeros(2), np.eye(2))
    assert kld_gaussians(law, other) > 0


def test_mc_estimate_matches_closed_form_s1(s1, rng):
    util = ShannonUtility(s1, "shannon-log-posterior")
    for d in (-1.0, 0.0, 1.0):
        mean, se = estimate_expected_utility(s1, util, [d], 20_000, rng)
        assert abs(mean - m.analytic_expected_utility(s1, [d])) <= 4 * se


def test_enforce_positive_shift_and_retry():
    spec = UtilitySpec(positivity="shift", shift=2.0)
    assert enforce_positive(-1.0, spec, None).value == 1.0
    with pytest.raises(UtilityError):
        enforce_positive(-3.0, spec, None)
    vals = iter([-1.0, 0.0, 0.5])
    out = enforce_positive(-2.0, UtilitySpec(), lambda: next(vals))
    assert out.value == 0.5 and out.resample_count == 3
    with pytest.raises(UtilityError, match="unreachable"):
        enforce_positive(-1.0, UtilitySpec(cap=5), lambda: -1.0)


def test_fill_positive_keeps_positive_law(rng):
    def draw(rows):
        u = rng.normal(size=rows.size)
        return u[:, None], u[:, None], u

    theta, z, u, retries = fill_positive(draw, np.zeros(50_000, dtype=np.int64), UtilitySpec())
    assert np.all(u > 0) and retries > 0
    # half-normal mean sqrt(2/pi)
    assert u.mean() == pytest.approx(np.sqrt(2 / np.pi), abs=0.01)
    np.testing.assert_array_equal(theta[:, 0], u)


def test_fill_positive_cap():
    def draw(rows):
        return np.zeros((rows.size, 1)), np.zeros((rows.size, 1)), -np.ones(rows.size)

    with pytest.raises(UtilityError):
        fill_positive(draw, np.zeros(3, dtype=np.int64), UtilitySpec(cap=10))


def test_callable_utility():
    util = CallableUtility(lambda z, d, th: 1.0 + d[:, 0])
    cache = util.prepare(np.array([[0.5], [-0.5]]))
    np.testing.assert_allclose(util.evaluate(cache, np.array([0, 1]), None, None), [1.5, 0.5])


def test_particle_update_and_summary(s1, rng):
    th = analytic_posterior_source(s1).sample(rng, 2000)
    ps = PosteriorParticleSet(th, np.ones(2000))
    z = s1.simulate(th[0], np.array([1.0]), rng)
    upd = update_posterior_particles(ps, z, [1.0], ABCKernel("uniform", 2.0), 5, s1, rng)
    assert upd.ess < ps.ess
    assert particle_summary_utility(upd, "trace-variance") > particle_summary_utility(
        ps, "trace-variance")
    with pytest.raises(UtilityError, match="degenerate"):
        update_posterior_particles(ps, [1e6], [1.0], ABCKernel("uniform", 0.1), 1, s1, rng)
    v = particle_summary_utility(ps, "predictive-mean", s1, rng, [0.0])
    assert v == pytest.approx(0.0, abs=0.2)
