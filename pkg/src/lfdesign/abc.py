"""Likelihood-free building blocks.

Smoothing kernels comparing simulated with observed data, rejection ABC,
likelihood-free MCMC with ``M`` pseudo-data replicates, and ABC population
Monte Carlo (Beaumont-corrected importance weights, repeat-until-accept
rejection control) for estimating the posterior from past observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from . import kernels
from ._io import atomic_write_text, csv_text
from .model import ObservationSet, simulator_view

FAMILIES = ("uniform", "gaussian", "epanechnikov")
STALL_CAP = 10_000_000
_MAX_CANDIDATES = 1_000_000
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ABCError(RuntimeError):
    """Raised when an ABC routine cannot make progress.

    ``partial`` carries the last completed particle set, when there is one.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


def default_distance(a, b):
    """Euclidean distance scaled by ``1/sqrt(dim)``; equals ``|a - b|`` in one dimension."""
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return np.sqrt(np.sum(diff * diff, axis=-1) / diff.shape[-1])


@dataclass(frozen=True)
class ABCKernel:
    """Smoothing kernel ``p_eps(y | x)``.

    ``epsilon = inf`` saturates every family to the constant 1.
    """

    family: str = "uniform"
    epsilon: float = 1.0
    summary: Callable | None = None
    distance: Callable | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def is_default_uniform(self):
        return self.family == "uniform" and self.summary is None and self.distance is None

    def with_epsilon(self, epsilon):
        return ABCKernel(self.family, epsilon, self.summary, self.distance)

    @property
    def peak(self):
        """Largest attainable kernel value."""
        if math.isinf(self.epsilon) or self.family == "uniform":
            return 1.0
        if self.family == "gaussian":
            return _INV_SQRT_2PI / self.epsilon
        return 0.75 / self.epsilon

    def evaluate(self, y, x):
        """Kernel values for observed ``y`` (s,) against simulated rows ``x`` (..., s)."""
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != y.shape[-1]:
            raise ValueError(f"observation length mismatch: {y.shape[-1]} vs {x.shape[-1]}")
        if math.isinf(self.epsilon):
            return np.ones(x.shape[:-1])
        if self.is_default_uniform:
            flat = x.reshape(-1, y.shape[-1])
            return kernels.uniform_hits(y, flat, self.epsilon).reshape(x.shape[:-1]).astype(float)
        if self.summary is not None:
            ty = np.asarray(self.summary(y), dtype=float)
            tx = np.asarray(self.summary(x), dtype=float)
        else:
            ty, tx = y, x
        dist = (self.distance or default_distance)(tx, ty)
        u = np.asarray(dist, dtype=float) / self.epsilon
        if self.family == "uniform":
            return (u < 1.0).astype(float)
        if self.family == "gaussian":
            return _INV_SQRT_2PI * np.exp(-0.5 * u * u) / self.epsilon
        return np.where(u < 1.0, 0.75 * (1.0 - u * u), 0.0) / self.epsilon


def kernel_eval(kernel, y, x):
    """Kernel value comparing two observation sets."""
    yv = np.atleast_1d(getattr(y, "values", y)).astype(float)
    xv = np.atleast_1d(getattr(x, "values", x)).astype(float)
    if yv.shape != xv.shape:
        raise ValueError(f"observation length mismatch: {yv.size} vs {xv.size}")
    return float(kernel.evaluate(yv, xv))


def _accept_mask(kernel, values, rng):
    if kernel.family == "uniform" or math.isinf(kernel.epsilon):
        return values > 0
    return rng.random(values.shape) * kernel.peak < values


@dataclass
class PosteriorParticleSet:
    """Weighted parameter particles approximating ``p(theta | y, xi)``."""

    thetas: np.ndarray
    weights: np.ndarray
    generation: int = 1
    epsilon: float = math.inf
    counters: list = field(default_factory=list)  # (proposals, accepted) per generation

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.thetas.shape[0],):
            raise ValueError("one weight per particle required")
        if np.any(w < 0) or not np.isfinite(w).all() or not w.sum() > 0:
            raise ValueError("weights must be finite, non-negative and not all zero")
        self.weights = w / w.sum()

    def __len__(self):
        return self.thetas.shape[0]

    @property
    def ess(self):
        return 1.0 / float(np.sum(self.weights ** 2))


# ---------------------------------------------------------------------------
# rejection sampling


def lf_rejection_sample(model, kernel, y, count, rng, stall_cap=STALL_CAP):
    """Likelihood-free rejection sampling until ``count`` parameters are accepted."""
    sim = simulator_view(model)
    y = y if isinstance(y, ObservationSet) else ObservationSet(*y)
    accepted = []
    n_acc = 0
    proposals = 0
    rate = 1.0
    while n_acc < count:
        batch = int(min(_MAX_CANDIDATES, max(256, 1.2 * (count - n_acc) / max(rate, 1e-6))))
        theta = sim.prior_sample(rng, batch)
        x = sim.simulate(theta, y.at, rng)
        ok = _accept_mask(kernel, kernel.evaluate(y.values, x), rng)
        proposals += batch
        hits = theta[ok]
        accepted.append(hits[: count - n_acc])
        n_acc += min(hits.shape[0], count - n_acc)
        rate = max(ok.mean(), 0.5 / batch)
        if n_acc == 0 and proposals >= stall_cap:
            raise ABCError(f"epsilon too tight: no acceptance in {proposals} proposals")
    thetas = np.concatenate(accepted, axis=0)
    return PosteriorParticleSet(thetas, np.full(count, 1.0 / count), generation=1,
                                epsilon=kernel.epsilon, counters=[(proposals, count)])


# ---------------------------------------------------------------------------
# likelihood-free MCMC


class GaussianRandomWalk:
    """Symmetric Gaussian random-walk proposal ``q(theta' | theta)``."""

    def __init__(self, cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.chol = linalg.cholesky(cov, lower=True)

    def sample(self, theta, rng):
        return theta + self.chol @ rng.standard_normal(theta.shape[-1])

    def log_ratio(self, theta_new, theta_old):
        """``log q(old | new) - log q(new | old)``; zero for a symmetric walk."""
        return 0.0


@dataclass
class LFState:
    theta: np.ndarray
    x: np.ndarray          # (M, s) pseudo-data
    kernel_sum: float


def lf_mcmc_init(model, kernel, M, y, theta, rng):
    sim = simulator_view(model)
    theta = np.asarray(theta, dtype=float)
    x = sim.simulate(np.broadcast_to(theta, (M, theta.size)), y.at, rng)
    return LFState(theta, x, float(kernel.evaluate(y.values, x).sum()))


def lf_mcmc_step(state, kernel, M, model, q_theta, y, rng):
    """One MH step on the M-replicate augmented likelihood-free posterior."""
    sim = simulator_view(model)
    theta_new = q_theta.sample(state.theta, rng)
    x_new = sim.simulate(np.broadcast_to(theta_new, (M, theta_new.size)), y.at, rng)
    ksum_new = float(kernel.evaluate(y.values, x_new).sum())
    log_u = math.log(rng.random())
    if ksum_new <= 0.0:
        return state, False
    if state.kernel_sum <= 0.0:
        return LFState(theta_new, x_new, ksum_new), True
    log_alpha = (math.log(ksum_new) - math.log(state.kernel_sum)
                 + float(sim.prior_logpdf(theta_new)) - float(sim.prior_logpdf(state.theta))
                 + q_theta.log_ratio(theta_new, state.theta))
    if log_u < log_alpha:
        return LFState(theta_new, x_new, ksum_new), True
    return state, False


def lf_mcmc_run(model, kernel, M, y, q_theta, steps, rng, theta_init=None, thin=1):
    """Run an LF-MCMC chain; returns ``(draws, acceptance_rate)``."""
    sim = simulator_view(model)
    y = y if isinstance(y, ObservationSet) else ObservationSet(*y)
    if theta_init is None:
        theta_init = sim.prior_sample(rng)
    state = lf_mcmc_init(sim, kernel, M, y, theta_init, rng)
    draws = []
    n_acc = 0
    for t in range(steps):
        state, acc = lf_mcmc_step(state, kernel, M, sim, q_theta, y, rng)
        n_acc += acc
        if t % thin == 0:
            draws.append(state.theta.copy())
    draws = np.array(draws).reshape(-1, np.size(theta_init))
    return draws, (n_acc / steps if steps else 0.0)


# ---------------------------------------------------------------------------
# population Monte Carlo


def weighted_moments(particles):
    """Weighted mean and covariance (no small-sample correction)."""
    if particles.ess < 2.0:
        raise ValueError(f"degenerate particle set (ESS {particles.ess:.3g} < 2)")
    w = particles.weights
    mean = w @ particles.thetas
    r = particles.thetas - mean
    cov = (r * w[:, None]).T @ r
    return mean, 0.5 * (cov + cov.T)


def validate_schedule(schedule):
    sched = [float(e) for e in schedule]
    if not sched:
        raise ValueError("epsilon schedule is empty")
    if any(not e > 0 for e in sched):
        raise ValueError("epsilon schedule entries must be positive")
    if any(b >= a for a, b in zip(sched, sched[1:])):
        raise ValueError("epsilon schedule must be strictly decreasing")
    return sched


def _pmc_generation(sim, kernel, y, prev, rng, stall_cap):
    R, k = prev.thetas.shape
    _, cov = weighted_moments(prev)
    cov = 2.0 * cov
    chol = linalg.cholesky(cov, lower=True)
    cdf = np.cumsum(prev.weights)
    cdf[-1] = 1.0

    out = np.empty((R, k))
    need = np.arange(R)
    proposals = 0
    rate = 1.0
    while need.size:
        m = int(min(max(1, math.ceil(1.5 / rate)), max(1, _MAX_CANDIDATES // need.size)))
        slots = np.repeat(need, m)
        anc = np.minimum(np.searchsorted(cdf, rng.random(slots.size), side="right"), R - 1)
        cand = prev.thetas[anc] + rng.standard_normal((slots.size, k)) @ chol.T
        x = sim.simulate(cand, y.at, rng)
        ok = _accept_mask(kernel, kernel.evaluate(y.values, x), rng)
        okm = ok.reshape(need.size, m)
        has = okm.any(axis=1)
        first = okm.argmax(axis=1)
        proposals += int(np.where(has, first + 1, m).sum())
        pick = np.flatnonzero(has)
        out[need[pick]] = cand[pick * m + first[pick]]
        rate = max(ok.mean(), 1e-6)
        need = need[~has]
        if need.size and proposals >= stall_cap:
            raise ABCError(
                f"schedule too aggressive: generation at epsilon={kernel.epsilon} stalled "
                f"after {proposals} proposals", partial=prev)

    # Beaumont weights: prior / Gaussian mixture centred on the previous generation.
    linv = linalg.solve_triangular(chol, np.eye(k), lower=True)
    log_mix = kernels.gauss_mixture_logsumexp(out @ linv.T, prev.thetas @ linv.T,
                                              np.log(prev.weights))
    log_norm = 0.5 * k * math.log(2.0 * math.pi) + float(np.sum(np.log(np.diag(chol))))
    logw = sim.prior_logpdf(out) - (log_mix - log_norm)
    logw -= logw.max()
    w = np.exp(logw)
    return PosteriorParticleSet(out, w, generation=prev.generation + 1, epsilon=kernel.epsilon,
                                counters=prev.counters + [(proposals, R)])


def abc_pmc_run(model, kernel, schedule, n_particles, y, rng, stall_cap=STALL_CAP):
    """ABC population Monte Carlo over a decreasing epsilon schedule.

    ``kernel`` supplies family, summary and distance; its epsilon is replaced by
    each schedule entry in turn.
    """
    sim = simulator_view(model)
    y = y if isinstance(y, ObservationSet) else ObservationSet(*y)
    schedule = validate_schedule(schedule)
    if isinstance(kernel, str):
        kernel = ABCKernel(kernel, schedule[0])
    current = lf_rejection_sample(sim, kernel.with_epsilon(schedule[0]), y, n_particles, rng,
                                  stall_cap=stall_cap)
    for eps in schedule[1:]:
        current = _pmc_generation(sim, kernel.with_epsilon(eps), y, current, rng, stall_cap)
    return current


# ---------------------------------------------------------------------------
# persistence


def write_particles(path, particles):
    k = particles.thetas.shape[1]
    header = [f"theta_{i + 1}" for i in range(k)] + ["weight"]
    rows = np.column_stack([particles.thetas, particles.weights])
    atomic_write_text(path, csv_text(header, rows.tolist()))


def read_particles(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[-1] != "weight" or not all(
                h == f"theta_{i + 1}" for i, h in enumerate(header[:-1])):
            raise ValueError(f"{path}: expected header theta_1,...,theta_k,weight")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return PosteriorParticleSet(data[:, :-1], data[:, -1])
