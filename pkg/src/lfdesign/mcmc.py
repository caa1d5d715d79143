"""Metropolis-Hastings design samplers on augmented targets.

A state holds a design ``d`` and ``J`` blocks ``(theta_j, z_j)`` (plus ``M``
pseudo-data replicates per block in likelihood-free mode).  Its log target is

    sum_j [log u_j + extra_j]

where ``extra_j`` is zero for the plain sampler, the likelihood/prior/proposal
correction for approximate parameter proposals, and the log mean kernel value
in likelihood-free mode.  The design marginal of the target is proportional to
the ``J``-th power of the expected utility.

Independence design proposals are run in chunks: proposals, their blocks and
the uniforms are generated in bulk and the accept/reject scan runs in the
compiled kernel.  Random-walk proposals depend on the current state and go
through the per-step path.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import simulator_view
from .sources import default_theta_source
from .utility import UtilitySpec, fill_positive

CHUNK_WORK = 200_000
PROGRESS_EVERY = 10_000


class ChainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# proposals and schedules


class DesignProposal:
    """Proposal ``g(d' | d)`` on a rectangular design box.

    Parameters
    ----------
    kind : {"uniform", "gaussian-rw", "mixture", "discrete"}
        ``"mixture"`` draws uniformly with probability ``p_uniform`` and takes a
        random-walk step otherwise; ``"discrete"`` is uniform over ``support``.
    lower, upper : array_like
        Design box.  Random-walk proposals leaving it are rejected.
    step : float
        Random-walk standard deviation.
    """

    def __init__(self, kind="uniform", lower=-1.0, upper=1.0, step=0.1, p_uniform=0.5,
                 support=None, n=None):
        if kind not in ("uniform", "gaussian-rw", "mixture", "discrete"):
            raise ChainError(f"unknown proposal kind {kind!r}")
        if kind in ("gaussian-rw", "mixture") and not step > 0:
            raise ChainError("random-walk step must be > 0")
        if not 0.0 <= p_uniform <= 1.0:
            raise ChainError("p_uniform must lie in [0, 1]")
        n = n or np.size(lower)
        self.kind = kind
        self.lower = np.broadcast_to(np.asarray(lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(upper, dtype=float), (n,)).copy()
        self.step = float(step)
        self.p_uniform = float(p_uniform)
        self.support = None
        if kind == "discrete":
            if support is None:
                raise ChainError("discrete proposal needs a support")
            self.support = np.asarray(support, dtype=float).reshape(-1, n)

    @classmethod
    def for_model(cls, model, kind="uniform", **kw):
        lo, hi = model.bounds
        return cls(kind, lo, hi, n=lo.size, **kw)

    @property
    def n(self):
        return self.lower.size

    @property
    def independent(self):
        return self.kind in ("uniform", "discrete")

    def sample_independent(self, rng, size):
        if self.kind == "uniform":
            return self.lower + (self.upper - self.lower) * rng.random((size, self.n))
        if self.kind == "discrete":
            return self.support[rng.integers(0, len(self.support), size)]
        raise ChainError(f"{self.kind} is not an independence proposal")

    def sample(self, current, rng):
        if self.independent:
            return self.sample_independent(rng, 1)[0]
        if self.kind == "mixture" and rng.random() < self.p_uniform:
            return self.sample_independent_uniform(rng)
        return current + self.step * rng.standard_normal(self.n)

    def sample_independent_uniform(self, rng):
        return self.lower + (self.upper - self.lower) * rng.random(self.n)

    def in_bounds(self, d):
        return bool(np.all(d >= self.lower) and np.all(d <= self.upper))

    def log_ratio(self, d_new, d_old):
        """``log g(d_old | d_new) - log g(d_new | d_old)``.

        Every supported kind is symmetric on the box, so this is zero.
        """
        return 0.0


@dataclass(frozen=True)
class JSchedule:
    """``J(t)`` for ``t = 1, 2, ...``.

    ``fixed`` holds ``J``; ``log`` is ``min(J_max, 1 + floor(delta log(1 + t)))``;
    ``ramp`` climbs linearly from 1 to ``J_max`` over ``steps`` iterations
    (used by the particle samplers).
    """

    kind: str = "fixed"
    J: int = 1
    delta: float = 0.0
    J_max: int = 1
    steps: int = 1

    def __post_init__(self):
        if self.kind not in ("fixed", "log", "ramp"):
            raise ChainError(f"unknown J schedule {self.kind!r}")
        if self.kind == "fixed" and self.J < 1:
            raise ChainError("J must be >= 1")
        if self.kind == "log" and (self.delta < 0 or self.J_max < 1):
            raise ChainError("log schedule needs delta >= 0 and J_max >= 1")
        if self.kind == "ramp" and (self.steps < 1 or self.J_max < 1):
            raise ChainError("ramp schedule needs steps >= 1 and J_max >= 1")

    @classmethod
    def fixed(cls, J):
        return cls("fixed", J=int(J), J_max=int(J))

    @classmethod
    def logarithmic(cls, delta, J_max):
        return cls("log", J=1, delta=float(delta), J_max=int(J_max))

    @classmethod
    def ramp(cls, J_max, steps):
        return cls("ramp", J=1, J_max=int(J_max), steps=int(steps))

    def at(self, t):
        if self.kind == "fixed":
            return self.J
        if self.kind == "ramp":
            return 1 + int(round((self.J_max - 1) * min(t, self.steps) / self.steps))
        return min(self.J_max, 1 + int(math.floor(self.delta * math.log1p(t))))

    def next_change(self, t):
        """First iteration after ``t`` where J increases (``inf`` if never)."""
        cur = self.at(t)
        if self.kind == "fixed" or cur >= self.J_max:
            return math.inf
        if self.kind == "ramp":
            guess = t + 1
            while self.at(guess) <= cur:
                guess += 1
            return guess
        if self.delta == 0:
            return math.inf
        guess = max(t + 1, int(math.ceil(math.expm1(cur / self.delta))) - 2)
        while self.at(guess) <= cur:
            guess += 1
        return guess


# ---------------------------------------------------------------------------
# states and block sampling


@dataclass
class Blocks:
    """Blocks simulated for ``B`` designs: arrays shaped ``(B, J, ...)``."""

    theta: np.ndarray
    z: np.ndarray
    log_u: np.ndarray
    log_extra: np.ndarray
    x: np.ndarray | None = None

    @property
    def log_target(self):
        return np.sum(self.log_u + self.log_extra, axis=1)


@dataclass
class AugmentedState:
    design: np.ndarray
    theta: np.ndarray          # (J, k)
    z: np.ndarray              # (J, n)
    log_u: np.ndarray          # (J,)
    log_extra: np.ndarray      # (J,)
    x: np.ndarray | None = None  # (J, M, s) in likelihood-free mode

    @property
    def J(self):
        return self.theta.shape[0]

    @property
    def utilities(self):
        return np.exp(self.log_u)

    @property
    def kernel_means(self):
        return np.exp(self.log_extra) if self.x is not None else None

    @property
    def log_target(self):
        return float(np.sum(self.log_u + self.log_extra))

    @classmethod
    def from_blocks(cls, design, blocks, i):
        return cls(np.array(design, dtype=float), blocks.theta[i].copy(), blocks.z[i].copy(),
                   blocks.log_u[i].copy(), blocks.log_extra[i].copy(),
                   None if blocks.x is None else blocks.x[i].copy())

    def extend(self, J_new, rng):
        """Grow to ``J_new`` blocks by resampling existing blocks uniformly with replacement."""
        if J_new <= self.J:
            return self
        pick = rng.integers(0, self.J, J_new - self.J)
        cat = lambda a: np.concatenate([a, a[pick]], axis=0)  # noqa: E731
        return AugmentedState(self.design, cat(self.theta), cat(self.z), cat(self.log_u),
                              cat(self.log_extra), None if self.x is None else cat(self.x))


class BlockSampler:
    """Simulates blocks at given designs and scores them.

    Use the constructors :meth:`plain`, :meth:`prior_obs` and
    :meth:`likelihood_free`.
    """

    def __init__(self, mode, model, utility, spec, source, kernel=None, M=0, y=None):
        self.mode = mode
        self.model = model
        self.utility = utility
        self.spec = spec or UtilitySpec()
        self.source = source
        self.kernel = kernel
        self.M = M
        self.y = y
        self.retries = 0
        self.nonfinite = 0

    @classmethod
    def plain(cls, model, utility, spec=None, source=None):
        """Parameters from ``source`` treated as exact (default: posterior given past data)."""
        return cls("plain", model, utility, spec, source or default_theta_source(model))

    @classmethod
    def prior_obs(cls, model, utility, source, spec=None):
        """Approximate parameter proposal ``k`` with its likelihood/prior correction."""
        if not getattr(model, "has_density", False):
            raise ChainError("prior-observation correction needs a model density")
        if not hasattr(source, "logpdf"):
            raise ChainError("prior-observation correction needs a proposal density")
        return cls("prior-obs", model, utility, spec, source, y=model.prior_data)

    @classmethod
    def likelihood_free(cls, model, utility, kernel, M, spec=None, y=None):
        """Parameters from the prior; past data enter through ``M`` simulated replicates."""
        from .sources import PriorSource

        if M < 1:
            raise ChainError("M must be >= 1")
        y = y if y is not None else model.prior_data
        if len(y) == 0:
            raise ChainError("likelihood-free sampler needs past observations")
        sim = simulator_view(model)
        return cls("lf", sim, utility, spec, PriorSource(sim), kernel=kernel, M=int(M), y=y)

    @property
    def J_cost(self):
        return 1 + self.M

    def draw(self, designs, J, rng):
        designs = np.atleast_2d(np.asarray(designs, dtype=float))
        B = designs.shape[0]
        cache = self.utility.prepare(designs)
        rows = np.repeat(np.arange(B), J)
        model, source, utility = self.model, self.source, self.utility

        def one(r):
            th = source.sample(rng, r.size)
            zz = model.simulate(th, designs[r], rng)
            return th, zz, np.asarray(utility.evaluate(cache, r, zz, th), dtype=float)

        theta, z, u, retries = fill_positive(one, rows, self.spec)
        self.retries += retries
        k = theta.shape[-1]
        n = designs.shape[1]
        x = None
        if self.mode == "plain":
            extra = np.zeros(B * J)
        elif self.mode == "prior-obs":
            y = self.y
            extra = (model.log_density(y.values, theta, y.at) + model.prior_logpdf(theta)
                     - source.logpdf(theta))
            bad = ~np.isfinite(extra)
            if bad.any():
                self.nonfinite += int(bad.sum())
                extra = np.where(bad, -np.inf, extra)
        else:
            M = self.M
            y = self.y
            xx = model.simulate(np.repeat(theta, M, axis=0), y.at, rng)
            kv = self.kernel.evaluate(y.values, xx).reshape(B * J, M)
            with np.errstate(divide="ignore"):
                extra = np.log(kv.mean(axis=1))
            x = xx.reshape(B, J, M, -1)
        return Blocks(theta.reshape(B, J, k), z.reshape(B, J, n), np.log(u).reshape(B, J),
                      extra.reshape(B, J), x)


def initial_state(sampler, proposal, J, rng, d0=None):
    d = proposal.sample_independent_uniform(rng) if d0 is None else np.atleast_1d(
        np.asarray(d0, dtype=float))
    if not proposal.in_bounds(d):
        raise ChainError(f"initial design {d.tolist()} outside the design box")
    return AugmentedState.from_blocks(d, sampler.draw(d[None, :], J, rng), 0)


# ---------------------------------------------------------------------------
# single steps


def propose(state, sampler, proposal, J, rng):
    """Proposed state and ``log alpha`` (``-inf`` when the proposal is unusable)."""
    d_new = proposal.sample(state.design, rng)
    if not proposal.in_bounds(d_new):
        return None, -math.inf
    blocks = sampler.draw(d_new[None, :], J, rng)
    new = AugmentedState.from_blocks(d_new, blocks, 0)
    lt_new = new.log_target
    lt_cur = state.log_target
    if not lt_new > -math.inf:
        return new, -math.inf
    if lt_cur == -math.inf:
        return new, math.inf
    return new, lt_new - lt_cur + proposal.log_ratio(d_new, state.design)


def mh_step(state, sampler, proposal, rng, J=None):
    J = J or state.J
    new, log_alpha = propose(state, sampler, proposal, J, rng)
    if new is None:
        return state, False
    if log_alpha == math.inf or math.log(rng.random()) < log_alpha:
        return new, True
    return state, False


def muller_step(state, model, utility, proposal, rng, spec=None, source=None, sampler=None):
    """Basic sampler step: one block, acceptance ``u'/u`` times the g ratio."""
    if state.J != 1:
        raise ChainError("muller_step expects a single block")
    sampler = sampler or BlockSampler.plain(model, utility, spec, source)
    return mh_step(state, sampler, proposal, rng, J=1)


def annealed_step(state, J, model, utility, proposal, rng, spec=None, source=None, sampler=None):
    """Power-``J`` step: all ``J`` blocks refreshed at the proposed design."""
    sampler = sampler or BlockSampler.plain(model, utility, spec, source)
    state = state if state.J == J else state.extend(J, rng)
    return mh_step(state, sampler, proposal, rng, J=J)


def prior_obs_step(state, model, utility, proposal, source, rng, spec=None, sampler=None):
    sampler = sampler or BlockSampler.prior_obs(model, utility, source, spec)
    return mh_step(state, sampler, proposal, rng)


def lf_augmented_step(state, kernel, M, model, utility, proposal, rng, spec=None, sampler=None):
    sampler = sampler or BlockSampler.likelihood_free(model, utility, kernel, M, spec)
    return mh_step(state, sampler, proposal, rng)


# ---------------------------------------------------------------------------
# chains


@dataclass
class ChainOutput:
    draws: np.ndarray                 # (S, n) stored designs
    iters: np.ndarray                 # (S,) iteration index of each stored draw
    utility: np.ndarray               # (S,) mean block utility of each stored state
    n_accepted: int
    n_proposed: int
    J_final: int
    final_state: AugmentedState | None = None
    seed: int | None = None
    wall_clock: float = 0.0
    thin: int = 1
    retries: int = 0
    nonfinite: int = 0
    flags: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self):
        return self.n_accepted / self.n_proposed if self.n_proposed else 0.0


class _Progress:
    def __init__(self, total, enabled, label="chain"):
        self.total = total
        self.enabled = enabled
        self.label = label
        self.next = PROGRESS_EVERY

    def update(self, t, n_acc):
        if self.enabled and t >= self.next:
            print(f"[{self.label}] {t}/{self.total} iterations, acceptance {n_acc / t:.4f}",
                  file=sys.stderr, flush=True)
            self.next = (t // PROGRESS_EVERY + 1) * PROGRESS_EVERY


def run_sampler(sampler, proposal, schedule, iterations, rng, thin=1, d0=None, progress=False,
                seed=None, config=None, state=None):
    """Run a design chain for ``iterations`` MH steps, storing every ``thin``-th state."""
    if thin < 1:
        raise ChainError("thin must be >= 1")
    if iterations < 0:
        raise ChainError("iterations must be >= 0")
    t_start = time.perf_counter()
    if state is None:
        state = initial_state(sampler, proposal, schedule.at(1), rng, d0)
    n_store = iterations // thin
    draws = np.empty((n_store, proposal.n))
    iters = np.empty(n_store, dtype=np.int64)
    util = np.empty(n_store)
    filled = 0
    n_acc = 0
    prog = _Progress(iterations, progress)
    t = 0
    while t < iterations:
        J = schedule.at(t + 1)
        if J > state.J:
            state = state.extend(J, rng)
        if proposal.independent:
            horizon = min(iterations, schedule.next_change(t + 1) - 1)
            T_c = int(max(1, min(horizon - t, CHUNK_WORK // (J * sampler.J_cost))))
            state, acc, filled = _independence_chunk(state, sampler, proposal, J, t, T_c, thin,
                                                     rng, draws, iters, util, filled)
            t += T_c
            n_acc += acc
        else:
            state, acc = mh_step(state, sampler, proposal, rng, J=J)
            t += 1
            n_acc += acc
            if t % thin == 0:
                draws[filled] = state.design
                iters[filled] = t
                util[filled] = state.utilities.mean()
                filled += 1
        prog.update(t, n_acc)
    out = ChainOutput(draws[:filled], iters[:filled], util[:filled], n_acc, iterations,
                      state.J, state, seed, time.perf_counter() - t_start, thin,
                      sampler.retries, sampler.nonfinite, config=dict(config or {}))
    if iterations == 0:
        out.flags.append("no iterations: acceptance rate reported as 0")
    elif n_acc == 0:
        out.flags.append("chain frozen")
    return out


def _independence_chunk(state, sampler, proposal, J, t0, T_c, thin, rng, draws, iters, util,
                        filled):
    designs = proposal.sample_independent(rng, T_c)
    blocks = sampler.draw(designs, J, rng)
    log_w = blocks.log_target
    log_unif = np.log(rng.random(T_c))
    idx, n_acc, _ = kernels.mh_scan(log_w, log_unif, state.log_target)
    t_idx = np.arange(t0 + 1, t0 + T_c + 1)
    keep = np.flatnonzero(t_idx % thin == 0)
    if keep.size:
        src = idx[keep]
        mean_u = np.exp(blocks.log_u).mean(axis=1)
        cur_u = state.utilities.mean()
        held = src >= 0
        sl = slice(filled, filled + keep.size)
        draws[sl] = np.where(held[:, None], designs[np.maximum(src, 0)], state.design)
        iters[sl] = t_idx[keep]
        util[sl] = np.where(held, mean_u[np.maximum(src, 0)], cur_u)
        filled += keep.size
    if idx[-1] >= 0:
        state = AugmentedState.from_blocks(designs[idx[-1]], blocks, idx[-1])
    return state, int(n_acc), filled


# ---------------------------------------------------------------------------
# convenience front ends


def muller_run(model, utility, iterations, rng, proposal=None, spec=None, source=None, **kw):
    proposal = proposal or DesignProposal.for_model(model)
    sampler = BlockSampler.plain(model, utility, spec, source)
    return run_sampler(sampler, proposal, JSchedule.fixed(1), iterations, rng, **kw)


def annealed_run(model, utility, J, iterations, rng, proposal=None, spec=None, source=None, **kw):
    proposal = proposal or DesignProposal.for_model(model)
    sampler = BlockSampler.plain(model, utility, spec, source)
    return run_sampler(sampler, proposal, JSchedule.fixed(J), iterations, rng, **kw)


def inhomogeneous_run(model, utility, delta, J_max, iterations, rng, proposal=None, spec=None,
                      source=None, **kw):
    """Chain with ``J(t) = min(J_max, 1 + floor(delta log(1 + t)))``."""
    proposal = proposal or DesignProposal.for_model(model)
    sampler = BlockSampler.plain(model, utility, spec, source)
    return run_sampler(sampler, proposal, JSchedule.logarithmic(delta, J_max), iterations, rng,
                       **kw)


def prior_obs_run(model, utility, source, J, iterations, rng, proposal=None, spec=None, **kw):
    proposal = proposal or DesignProposal.for_model(model)
    sampler = BlockSampler.prior_obs(model, utility, source, spec)
    return run_sampler(sampler, proposal, JSchedule.fixed(J), iterations, rng, **kw)


def lf_augmented_run(model, utility, kernel, M, J, iterations, rng, proposal=None, spec=None,
                     y=None, **kw):
    proposal = proposal or DesignProposal.for_model(model)
    sampler = BlockSampler.likelihood_free(model, utility, kernel, M, spec, y)
    return run_sampler(sampler, proposal, JSchedule.fixed(J), iterations, rng, **kw)
