"""Particle design optimizers: SIR, resampling-Markov and an SMC sampler.

Every particle is an augmented state (a design plus ``J`` blocks).  Block
simulation and scoring is shared with the MCMC samplers through
:class:`~lfdesign.mcmc.BlockSampler`, so the plain, prior-observation and
likelihood-free variants all work here too.  Weights are kept in log space and
normalized after every update.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .mcmc import Blocks, ChainError, DesignProposal


class ParticleError(RuntimeError):
    pass


@dataclass
class ParticleSet:
    """``N`` weighted augmented states; block arrays are shaped ``(N, J, ...)``."""

    designs: np.ndarray
    blocks: Blocks
    log_weights: np.ndarray

    def __post_init__(self):
        self.designs = np.atleast_2d(np.asarray(self.designs, dtype=float))
        lw = np.asarray(self.log_weights, dtype=float)
        if lw.shape != (self.designs.shape[0],):
            raise ValueError("one log weight per particle required")
        top = lw.max()
        if not top > -np.inf or np.isnan(lw).any():
            raise ParticleError("total weight collapse: every particle has zero weight")
        self.log_weights = lw - logsumexp(lw)

    @property
    def N(self):
        return self.designs.shape[0]

    @property
    def J(self):
        return self.blocks.theta.shape[1]

    @property
    def weights(self):
        w = np.exp(self.log_weights)
        return w / w.sum()

    @property
    def ess(self):
        return ess(self.weights)

    def subset(self, idx):
        b = self.blocks
        return ParticleSet(self.designs[idx], _take(b, idx), np.zeros(len(idx)))

    def with_log_weights(self, lw):
        return ParticleSet(self.designs, self.blocks, lw)


def _take(b, idx):
    return Blocks(b.theta[idx], b.z[idx], b.log_u[idx], b.log_extra[idx],
                  None if b.x is None else b.x[idx])


def _concat(a, b):
    cat = lambda u, v: np.concatenate([u, v], axis=1)  # noqa: E731
    return Blocks(cat(a.theta, b.theta), cat(a.z, b.z), cat(a.log_u, b.log_u),
                  cat(a.log_extra, b.log_extra), None if a.x is None else cat(a.x, b.x))


def _block_slice(b, sl):
    return Blocks(b.theta[:, sl], b.z[:, sl], b.log_u[:, sl], b.log_extra[:, sl],
                  None if b.x is None else b.x[:, sl])


def ess(weights):
    """Effective sample size ``1 / sum W^2`` of normalized weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
        raise ValueError("ess expects normalized, non-negative weights")
    return float(1.0 / np.sum(w * w))


def multinomial_indices(weights, rng, size=None):
    w = np.asarray(weights, dtype=float)
    size = w.size if size is None else size
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), w.size - 1)


def multinomial_resample(pset, rng):
    """Draw ``N`` ancestors with replacement by weight; output weights are ``1/N``."""
    return pset.subset(multinomial_indices(pset.weights, rng))


def maybe_resample(pset, rng, threshold=0.5):
    """Resample when ``ESS < threshold * N``; returns ``(set, resampled)``."""
    if pset.ess < threshold * pset.N:
        return multinomial_resample(pset, rng), True
    return pset, False


# ---------------------------------------------------------------------------
# shared moves


def initial_particles(sampler, proposal, N, J, rng):
    """Designs from the uniform proposal, weighted by the power-``J`` target."""
    designs = proposal.lower + (proposal.upper - proposal.lower) * rng.random((N, proposal.n))
    blocks = sampler.draw(designs, J, rng)
    return ParticleSet(designs, blocks, blocks.log_target)


def mh_enrich(pset, sampler, proposal, rng, n_blocks=None):
    """One MH move per particle with an independence design proposal.

    The first ``n_blocks`` blocks (default all) define the target and are
    redrawn at the proposed design; returns ``(set, acceptance fraction)``.
    """
    J = pset.J if n_blocks is None else n_blocks
    N = pset.N
    if J == 0:
        designs = proposal.sample_independent(rng, N)
        return ParticleSet(designs, pset.blocks, pset.log_weights), 1.0
    d_new = proposal.sample_independent(rng, N)
    new = sampler.draw(d_new, J, rng)
    cur_lt = np.sum(pset.blocks.log_u[:, :J] + pset.blocks.log_extra[:, :J], axis=1)
    new_lt = new.log_target
    log_unif = np.log(rng.random(N))
    with np.errstate(invalid="ignore"):
        acc = (new_lt > -np.inf) & ((cur_lt == -np.inf) | (log_unif < new_lt - cur_lt))
    designs = np.where(acc[:, None], d_new, pset.designs)
    head = _block_slice(pset.blocks, slice(0, J))
    merged = Blocks(*(None if a is None else np.where(acc.reshape((-1,) + (1,) * (a.ndim - 1)),
                                                     b, a)
                      for a, b in zip((head.theta, head.z, head.log_u, head.log_extra, head.x),
                                      (new.theta, new.z, new.log_u, new.log_extra, new.x))))
    if J < pset.J:
        merged = _concat(merged, _block_slice(pset.blocks, slice(J, None)))
    return ParticleSet(designs, merged, pset.log_weights), float(acc.mean())


def _gaussian_rw(pset, scale, proposal, rng):
    d_new = pset.designs + scale * rng.standard_normal(pset.designs.shape)
    inside = np.all((d_new >= proposal.lower) & (d_new <= proposal.upper), axis=1)
    n = d_new.shape[1]
    log_g = -0.5 * np.sum((d_new - pset.designs) ** 2, axis=1) / scale ** 2 \
        - n * math.log(scale) - 0.5 * n * math.log(2.0 * math.pi)
    return d_new, inside, log_g


# ---------------------------------------------------------------------------
# SIR and resampling-Markov


def sir_importance(pset, J, sampler, proposal, rng, scale_c=0.5):
    """Importance step: Gaussian random walk of SD ``c / sqrt(J)`` around each particle.

    Weights are ``prod_j u_j extra_j / g_IS(d | d_prev)``; designs leaving the
    box get weight zero.
    """
    scale = scale_c / math.sqrt(J)
    d_new, inside, log_g = _gaussian_rw(pset, scale, proposal, rng)
    d_eval = np.where(inside[:, None], d_new, pset.designs)
    blocks = sampler.draw(d_eval, J, rng)
    lw = np.where(inside, blocks.log_target - log_g, -np.inf)
    return ParticleSet(d_eval, blocks, lw)


def sir_iteration(pset, t, schedule, sampler, g_mh, rng, scale_c=0.5):
    """Importance step, multinomial resampling, then one MH enrichment move."""
    J = schedule.at(t)
    weighted = sir_importance(pset, J, sampler, g_mh, rng, scale_c)
    resampled = multinomial_resample(weighted, rng)
    moved, acc = mh_enrich(resampled, sampler, g_mh, rng)
    return moved, {"J": J, "ess": weighted.ess, "mh_acceptance": acc, "resampled": True}


def rm_reweight(pset, J, sampler, rng):
    """Simulate blocks ``J_prev+1 .. J`` at each particle's design and multiply them in."""
    if J < pset.J:
        raise ChainError("resampling-Markov needs a nondecreasing J schedule")
    if J == pset.J:
        return pset
    new = sampler.draw(pset.designs, J - pset.J, rng)
    return ParticleSet(pset.designs, _concat(pset.blocks, new), pset.log_weights + new.log_target)


def rm_iteration(pset, t, schedule, sampler, g_mh, rng):
    J = schedule.at(t)
    weighted = rm_reweight(pset, J, sampler, rng)
    resampled = multinomial_resample(weighted, rng)
    moved, acc = mh_enrich(resampled, sampler, g_mh, rng)
    return moved, {"J": J, "ess": weighted.ess, "mh_acceptance": acc, "resampled": True}


# ---------------------------------------------------------------------------
# SMC sampler


@dataclass(frozen=True)
class SMCSchedule:
    """Sequence of ``(J, nu)`` steps.

    For each ``J = 1 .. J_max`` the exponent ``nu`` climbs to 1 in steps of
    ``delta_nu``; ``delta_nu = 1`` gives the integer-only schedule.
    """

    J_max: int
    delta_nu: float = 0.25
    ess_threshold: float = 0.5

    def __post_init__(self):
        if self.J_max < 1:
            raise ChainError("J_max must be >= 1")
        if not 0 < self.delta_nu <= 1:
            raise ChainError("delta_nu must lie in (0, 1]")
        if not 0 < self.ess_threshold <= 1:
            raise ChainError("ess_threshold must lie in (0, 1]")

    @property
    def integer_only(self):
        return self.delta_nu == 1.0

    def steps(self):
        m = int(math.ceil(1.0 / self.delta_nu - 1e-12))
        nus = [min(1.0, (i + 1) * self.delta_nu) for i in range(m)]
        nus[-1] = 1.0
        return [(J, nu) for J in range(1, self.J_max + 1) for nu in nus]


def smc_incremental_log_weight(block, nu, model=None, designs=None):
    """Log incremental weight of the freshly drawn block ``J``.

    ``u`` at ``nu = 1``, 1 at ``nu = 0``; in between the tempered form
    ``u^nu (p(z|theta,d) p(theta))^(nu - 1)``, which needs a model density.
    """
    lu = block.log_u[:, 0] + block.log_extra[:, 0]
    if nu == 1.0:
        return lu
    if nu == 0.0:
        return np.zeros_like(lu)
    if model is None or not getattr(model, "has_density", False):
        raise ChainError("fractional nu needs a model with an evaluable density")
    theta = block.theta[:, 0]
    lp = model.log_density(block.z[:, 0], theta, designs) + model.prior_logpdf(theta)
    return nu * lu + (nu - 1.0) * lp


def smc_iteration(pset, J, nu, sampler, g_mh, rng, ess_threshold=0.5):
    """One SMC step at ``(J, nu)``.

    An MH move targets the power-``(J-1)`` target on the design and the first
    ``J-1`` blocks; block ``J`` is then drawn afresh at the current design and
    the weights are multiplied by the incremental weight.  Resampling happens
    when the ESS drops below ``ess_threshold * N``.
    """
    if not (0.0 <= nu <= 1.0):
        raise ChainError("nu must lie in [0, 1]")
    if 0.0 < nu < 1.0 and (sampler.mode == "lf" or not getattr(sampler.model, "has_density",
                                                                   False)):
        raise ChainError("fractional nu needs a model with an evaluable density")
    if J > pset.J + 1 or J < pset.J:
        raise ChainError("J may only grow by one per SMC step")
    moved, acc = mh_enrich(pset, sampler, g_mh, rng, n_blocks=J - 1)
    fresh = sampler.draw(moved.designs, 1, rng)
    head = _block_slice(moved.blocks, slice(0, J - 1))
    blocks = _concat(head, fresh)
    inc = smc_incremental_log_weight(fresh, nu, sampler.model, moved.designs)
    weighted = ParticleSet(moved.designs, blocks, moved.log_weights + inc)
    ess_before = weighted.ess
    out, resampled = maybe_resample(weighted, rng, ess_threshold)
    return out, {"J": J, "nu": nu, "ess": ess_before, "mh_acceptance": acc,
                 "resampled": resampled}


# ---------------------------------------------------------------------------
# runners


@dataclass
class ParticleRunOutput:
    particles: ParticleSet
    trace: list = field(default_factory=list)
    wall_clock: float = 0.0
    algo: str = ""
    seed: int | None = None
    config: dict = field(default_factory=dict)

    @property
    def designs(self):
        return self.particles.designs

    @property
    def weights(self):
        return self.particles.weights

    @property
    def ess_trace(self):
        return [r["ess"] for r in self.trace]

    def weighted_mean(self):
        return self.weights @ self.designs


def _run(step, pset, T, algo, seed, config, t0):
    trace = []
    for t in range(1, T + 1):
        pset, info = step(pset, t)
        trace.append(info)
    return ParticleRunOutput(pset, trace, time.perf_counter() - t0, algo, seed, dict(config or {}))


def run_sir(sampler, N, schedule, T, rng, proposal=None, scale_c=0.5, seed=None, config=None):
    t0 = time.perf_counter()
    proposal = proposal or DesignProposal.for_model(sampler.model)
    pset = multinomial_resample(initial_particles(sampler, proposal, N, schedule.at(0), rng), rng)
    return _run(lambda p, t: sir_iteration(p, t, schedule, sampler, proposal, rng, scale_c),
                pset, T, "sir", seed, config, t0)


def run_rm(sampler, N, schedule, T, rng, proposal=None, seed=None, config=None):
    t0 = time.perf_counter()
    proposal = proposal or DesignProposal.for_model(sampler.model)
    pset = multinomial_resample(initial_particles(sampler, proposal, N, schedule.at(0), rng), rng)
    return _run(lambda p, t: rm_iteration(p, t, schedule, sampler, proposal, rng),
                pset, T, "rm", seed, config, t0)


def run_smc(sampler, N, schedule, rng, proposal=None, seed=None, config=None):
    """SMC sampler over ``schedule.steps()``, starting from ``J = 0`` (uniform designs)."""
    t0 = time.perf_counter()
    proposal = proposal or DesignProposal.for_model(sampler.model)
    designs = proposal.sample_independent(rng, N)
    empty = sampler.draw(designs, 1, rng)
    pset = ParticleSet(designs, _block_slice(empty, slice(0, 0)), np.zeros(N))
    trace = []
    for J, nu in schedule.steps():
        pset, info = smc_iteration(pset, J, nu, sampler, proposal, rng, schedule.ess_threshold)
        trace.append(info)
    return ParticleRunOutput(pset, trace, time.perf_counter() - t0, "smc", seed,
                             dict(config or {}))
