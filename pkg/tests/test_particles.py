import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfdesign import particles as P
from lfdesign.mcmc import BlockSampler, ChainError, DesignProposal, JSchedule
from lfdesign.model import simulator_view
from lfdesign.utility import CallableUtility, ShannonUtility

LINEAR = CallableUtility(lambda z, d, th: 1.0 + d[:, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 500))
def test_ess_equal_weights(N):
    assert P.ess(np.full(N, 1.0 / N)) == pytest.approx(N)


def test_ess_point_mass_and_validation():
    w = np.zeros(10)
    w[3] = 1.0
    assert P.ess(w) == 1.0
    with pytest.raises(ValueError):
        P.ess(np.ones(3))


def test_multinomial_unbiased(rng):
    w = np.array([0.1, 0.2, 0.3, 0.4])
    counts = np.zeros(4)
    reps = 20_000
    for _ in range(reps):
        counts += np.bincount(P.multinomial_indices(w, rng), minlength=4)
    np.testing.assert_allclose(counts / (reps * 4), w, atol=0.005)


def _pset(s1, rng, N=100, J=2):
    sampler = BlockSampler.plain(s1, LINEAR)
    return P.initial_particles(sampler, DesignProposal.for_model(s1), N, J, rng), sampler


def test_weights_normalized_and_collapse(s1, rng):
    pset, _ = _pset(s1, rng)
    assert pset.weights.sum() == pytest.approx(1.0)
    with pytest.raises(P.ParticleError, match="collapse"):
        pset.with_log_weights(np.full(pset.N, -np.inf))


def test_maybe_resample_threshold(s1, rng):
    pset, _ = _pset(s1, rng)
    lw = np.full(pset.N, -np.inf)
    lw[:2] = 0.0
    out, did = P.maybe_resample(pset.with_log_weights(lw), rng, 0.5)
    assert did and out.ess == pytest.approx(pset.N)
    out, did = P.maybe_resample(pset.with_log_weights(np.zeros(pset.N)), rng, 0.5)
    assert not did


def test_initial_weights_are_power_target(s1, rng):
    pset, _ = _pset(s1, rng, N=5, J=3)
    lt = 3 * np.log1p(pset.designs[:, 0])
    np.testing.assert_allclose(pset.log_weights, lt - np.log(np.sum(np.exp(lt))))


def test_rm_reweight_multiplies_new_blocks(s1, rng):
    pset, sampler = _pset(s1, rng, N=50, J=1)
    out = P.rm_reweight(pset, 3, sampler, rng)
    assert out.J == 3
    np.testing.assert_allclose(out.log_weights, P.ParticleSet(
        pset.designs, out.blocks, 3 * np.log1p(pset.designs[:, 0])).log_weights)
    with pytest.raises(ChainError):
        P.rm_reweight(out, 2, sampler, rng)


@pytest.mark.parametrize("runner", ["sir", "rm"])
def test_particle_samplers_target_linear_power(s1, runner):
    sampler = BlockSampler.plain(s1, LINEAR)
    run = P.run_sir if runner == "sir" else P.run_rm
    out = run(sampler, 4000, JSchedule.ramp(2, 4), 6, np.random.default_rng(4))
    # marginal (1 + d)^2 has mean 1/2
    assert out.weighted_mean()[0] == pytest.approx(0.5, abs=0.05)
    assert len(out.ess_trace) == 6


def test_smc_integer_and_fractional(s1):
    util = ShannonUtility(s1)
    sampler = BlockSampler.plain(s1, util)
    out = P.run_smc(sampler, 1000, P.SMCSchedule(5, 1.0), np.random.default_rng(5))
    assert out.particles.J == 5 and len(out.trace) == 5
    out = P.run_smc(sampler, 500, P.SMCSchedule(2, 0.5), np.random.default_rng(5))
    assert [(r["J"], r["nu"]) for r in out.trace] == [(1, 0.5), (1, 1.0), (2, 0.5), (2, 1.0)]


def test_smc_fractional_needs_density(s1, rng):
    from lfdesign.abc import ABCKernel

    sampler = BlockSampler.likelihood_free(s1, ShannonUtility(s1), ABCKernel("uniform", 22.56), 1)
    with pytest.raises(ChainError, match="density"):
        P.run_smc(sampler, 50, P.SMCSchedule(1, 0.5), rng)
    with pytest.raises(ChainError):
        P.SMCSchedule(3, 0.0)


def test_smc_incremental_weight_endpoints(s1, rng):
    pset, sampler = _pset(s1, rng, N=20, J=1)
    b = pset.blocks
    np.testing.assert_allclose(P.smc_incremental_log_weight(b, 1.0), b.log_u[:, 0])
    np.testing.assert_allclose(P.smc_incremental_log_weight(b, 0.0), 0.0)
    with pytest.raises(ChainError):
        P.smc_incremental_log_weight(b, 0.5, simulator_view(s1), pset.designs)
