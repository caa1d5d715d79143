"""Utility functions, expected-utility estimation and positivity handling.

The samplers evaluate utilities for many (design, theta, z) triples at once.
A utility therefore works in two phases: ``prepare`` computes whatever depends
only on the designs (for the conjugate model, the updated-posterior precision
and its factorization), and ``evaluate`` maps rows of that cache plus the
simulated data and parameters to utility values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import (LOG_2PI, LinearGaussianScenario, analytic_posterior,
                    analytic_updated_posterior, design_matrix)

KINDS = ("shannon-log-ratio", "shannon-log-posterior", "kld-updated-vs-prior",
         "particle-variance", "custom")
POSITIVITY = ("resample-until-positive", "shift")
RETRY_CAP = 10_000
_MAX_CANDIDATES = 2_000_000


class UtilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class UtilitySpec:
    kind: str = "shannon-log-ratio"
    positivity: str = "resample-until-positive"
    shift: float = 0.0
    kld_baseline: str = "prior"   # or "posterior"
    cap: int = RETRY_CAP

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown utility.kind {self.kind!r}")
        if self.positivity not in POSITIVITY:
            raise ValueError(f"unknown utility.positivity {self.positivity!r}")
        if self.positivity == "shift" and not self.shift > 0:
            raise ValueError("utility.shift must be > 0 when positivity is 'shift'")
        if self.kld_baseline not in ("prior", "posterior"):
            raise ValueError("utility.kld_baseline must be 'prior' or 'posterior'")
        if self.cap < 1:
            raise ValueError("retry cap must be >= 1")


@dataclass(frozen=True)
class UtilityValue:
    value: float
    resample_count: int = 0


def kld_gaussians(p, q):
    """Closed-form ``KL(p || q)`` between two Gaussian laws."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    k = p.dim
    r = q.mean - p.mean
    tr = float(np.trace(q.precision @ p.covariance))
    quad = float(r @ q.precision @ r)
    return max(0.0, 0.5 * (tr + quad - k + q.logdet_cov - p.logdet_cov))


# ---------------------------------------------------------------------------
# utilities


class ShannonUtility:
    """Shannon-information utilities for the conjugate linear-Gaussian model.

    Parameters
    ----------
    scenario : LinearGaussianScenario
    kind : str
        ``"shannon-log-ratio"`` gives ``log p(theta | z, y) - log p_base(theta)``;
        ``"shannon-log-posterior"`` drops the baseline term;
        ``"kld-updated-vs-prior"`` is ``KL(p(. | z, y) || p_base)``, free of theta.
    baseline : {"prior", "posterior"}
        Reference law, either the prior or the posterior given past data only.
    """

    def __init__(self, scenario, kind="shannon-log-ratio", baseline="prior"):
        if not isinstance(scenario, LinearGaussianScenario):
            raise TypeError("Shannon utilities need the conjugate scenario")
        if kind not in ("shannon-log-ratio", "shannon-log-posterior", "kld-updated-vs-prior"):
            raise ValueError(f"not a Shannon utility kind: {kind!r}")
        self.scenario = scenario
        self.kind = kind
        self.baseline = scenario.prior if baseline == "prior" else analytic_posterior(scenario)
        self._rhs0 = scenario.K.T @ scenario.y_vec + scenario.R @ scenario.theta0_vec

    def prepare(self, designs):
        """Per-design quantities; ``designs`` has shape ``(B, n)``."""
        sc = self.scenario
        designs = np.atleast_2d(np.asarray(designs, dtype=float))
        F = design_matrix(designs, sc.degree)                      # (B, n, k)
        A = np.einsum("bni,bnj->bij", F, F) + sc.L + sc.R
        C = np.linalg.cholesky(A)
        logdet = 2.0 * np.log(np.diagonal(C, axis1=1, axis2=2)).sum(axis=1)
        Ainv = np.linalg.inv(A)
        return {
            "designs": designs,
            "A": A,
            "logdet": logdet,
            "c0": Ainv @ self._rhs0,
            "G": Ainv @ np.swapaxes(F, 1, 2),                      # (B, k, n)
            "Ainv": Ainv,
        }

    def _updated_mean(self, cache, rows, z):
        return cache["c0"][rows] + np.einsum("bkn,bn->bk", cache["G"][rows], z)

    def evaluate(self, cache, rows, z, theta):
        sc = self.scenario
        k = sc.k
        z = np.asarray(z, dtype=float)
        if self.kind == "kld-updated-vs-prior":
            m = self._updated_mean(cache, rows, z)
            base = self.baseline
            r = base.mean - m
            tr = np.einsum("ij,bji->b", base.precision, cache["Ainv"][rows]) * sc.sigma2
            quad = np.einsum("bi,ij,bj->b", r, base.precision, r)
            logdet_p = k * math.log(sc.sigma2) - cache["logdet"][rows]
            return 0.5 * (tr + quad - k + base.logdet_cov - logdet_p)
        quad = kernels.updated_quad(rows, z, theta, cache["c0"], cache["G"], cache["A"])
        quad = quad / sc.sigma2
        logpost = -0.5 * (k * LOG_2PI + k * math.log(sc.sigma2) - cache["logdet"][rows] + quad)
        if self.kind == "shannon-log-posterior":
            return logpost
        return logpost - self.baseline.logpdf(theta)

    def __call__(self, z, d, theta):
        cache = self.prepare(np.atleast_2d(d))
        z = np.atleast_2d(z)
        theta = np.atleast_2d(theta)
        rows = np.zeros(max(z.shape[0], theta.shape[0]), dtype=np.int64)
        out = self.evaluate(cache, rows, np.broadcast_to(z, (rows.size, z.shape[1])),
                            np.broadcast_to(theta, (rows.size, theta.shape[1])))
        return out if out.size > 1 else float(out[0])


class CallableUtility:
    """Wraps a vectorized ``fn(z, d, theta)`` with rows along the first axis."""

    kind = "custom"

    def __init__(self, fn):
        self.fn = fn

    def prepare(self, designs):
        return {"designs": np.atleast_2d(np.asarray(designs, dtype=float))}

    def evaluate(self, cache, rows, z, theta):
        return np.asarray(self.fn(z, cache["designs"][rows], theta), dtype=float)

    def __call__(self, z, d, theta):
        return self.fn(np.atleast_2d(z), np.atleast_2d(d), np.atleast_2d(theta))


class ConstantUtility(CallableUtility):
    def __init__(self, c=1.0):
        self.c = float(c)
        super().__init__(lambda z, d, theta: np.full(np.shape(z)[0], self.c))


def make_utility(model, spec):
    """Utility object for ``spec`` on ``model`` (conjugate kinds only)."""
    if spec.kind in ("shannon-log-ratio", "shannon-log-posterior", "kld-updated-vs-prior"):
        return ShannonUtility(model, spec.kind, spec.kld_baseline)
    raise ValueError(f"utility kind {spec.kind!r} needs an explicit utility object")


def shannon_utility(scenario, z, y, design, theta):
    """``log p(theta | z, y) - log p(theta)`` evaluated through explicit Gaussian laws."""
    post = analytic_updated_posterior(scenario, y, z, design)
    return float(post.logpdf(theta) - scenario.prior.logpdf(theta))


# ---------------------------------------------------------------------------
# positivity


def enforce_positive(raw, spec, retry):
    """Apply the positivity rule to a single raw utility.

    ``retry()`` re-simulates and returns a fresh raw value.
    """
    if spec.positivity == "shift":
        value = raw + spec.shift
        if not value > 0:
            raise UtilityError(f"utility positivity unreachable: {raw} + {spec.shift} <= 0")
        return UtilityValue(value, 0)
    count = 0
    while not raw > 0:
        if count >= spec.cap:
            raise UtilityError(f"utility positivity unreachable after {count} retries")
        raw = retry()
        count += 1
    return UtilityValue(float(raw), count)


def fill_positive(draw, rows, spec):
    """Batched positivity handling.

    Parameters
    ----------
    draw : callable
        ``draw(rows) -> (theta, z, u)`` simulates one block per entry of ``rows``.
    rows : int array
        Cache row (design index) for each requested block.

    Returns
    -------
    theta, z, u, retries
        Every ``u`` is strictly positive.  Under resample-until-positive each
        slot keeps the first positive draw, which has the same law as retrying
        one at a time.
    """
    rows = np.asarray(rows, dtype=np.int64)
    theta, z, u = draw(rows)
    if spec.positivity == "shift":
        u = u + spec.shift
        if not np.all(u > 0):
            raise UtilityError(f"utility positivity unreachable: shift {spec.shift} too small "
                               f"(min shifted value {u.min():.4g})")
        return theta, z, u, 0
    bad = np.flatnonzero(~(u > 0))
    if bad.size == 0:
        return theta, z, u, 0
    retries = 0
    attempts = np.zeros(bad.size, dtype=np.int64)
    rate = max(1.0 - bad.size / rows.size, 1e-3)
    while bad.size:
        m = int(min(math.ceil(1.5 / rate), spec.cap, max(1, _MAX_CANDIDATES // bad.size)))
        th, zz, uu = draw(np.repeat(rows[bad], m))
        ok = (uu > 0).reshape(bad.size, m)
        has = ok.any(axis=1)
        first = ok.argmax(axis=1)
        used = np.where(has, first + 1, m)
        retries += int(used.sum())
        attempts += used
        src = np.flatnonzero(has) * m + first[has]
        dst = bad[has]
        theta[dst] = th[src]
        z[dst] = zz[src]
        u[dst] = uu[src]
        bad, attempts = bad[~has], attempts[~has]
        if bad.size and attempts.max() >= spec.cap:
            raise UtilityError(f"utility positivity unreachable after {spec.cap} retries")
        rate = max(ok.mean(), 0.5 / (m * ok.shape[0]), 1e-6)
    return theta, z, u, retries


# ---------------------------------------------------------------------------
# Monte Carlo expected utility


def estimate_expected_utility(model, utility, design, T, rng, source=None):
    """Monte Carlo ``U(d) = E u(z, d, theta)`` with its standard error.

    ``theta`` comes from ``source`` (default: posterior given past data for
    conjugate models, the prior otherwise); no positivity handling is applied.
    """
    from .sources import default_theta_source

    if T < 2:
        raise ValueError("T must be >= 2")
    source = source or default_theta_source(model)
    d = np.atleast_1d(np.asarray(design, dtype=float))
    theta = source.sample(rng, T)
    z = model.simulate(theta, d, rng)
    cache = utility.prepare(d[None, :])
    u = np.asarray(utility.evaluate(cache, np.zeros(T, dtype=np.int64), z, theta), dtype=float)
    return float(u.mean()), float(u.std(ddof=1) / math.sqrt(T))


# ---------------------------------------------------------------------------
# particle-based utilities for simulate-only models


def update_posterior_particles(particles, z, design, kernel, M, model, rng):
    """Reweight theta particles by ``sum_m p_eps(z | x_m, theta)`` with ``x_m`` simulated."""
    from .abc import PosteriorParticleSet
    from .model import simulator_view

    if M < 1:
        raise ValueError("M must be >= 1")
    sim = simulator_view(model)
    zv = np.atleast_1d(np.asarray(getattr(z, "values", z), dtype=float))
    d = np.atleast_1d(np.asarray(design, dtype=float))
    N, k = particles.thetas.shape
    th = np.repeat(particles.thetas, M, axis=0)
    x = sim.simulate(th, d, rng)
    ksum = kernel.evaluate(zv, x).reshape(N, M).sum(axis=1)
    w = particles.weights * ksum
    if not w.sum() > 0:
        raise UtilityError("degenerate update: all kernel weights zero")
    return PosteriorParticleSet(particles.thetas, w, generation=particles.generation,
                                epsilon=kernel.epsilon, counters=list(particles.counters))


def particle_summary_utility(particles, kind, model=None, rng=None, d_p=None):
    """Summary-statistic utilities of a weighted theta particle set.

    ``"trace-variance"`` returns minus the trace of the weighted covariance;
    ``"predictive-mean"`` returns the weighted average of one simulated
    response per particle at ``d_p``.
    """
    w = particles.weights
    if kind == "trace-variance":
        if particles.ess < 2.0:
            raise ValueError("fewer than 2 effective particles")
        mean = w @ particles.thetas
        r = particles.thetas - mean
        return -float(np.einsum("i,ij,ij->", w, r, r))
    if kind == "predictive-mean":
        if model is None or rng is None or d_p is None:
            raise ValueError("predictive-mean needs model, rng and d_p")
        d = np.atleast_1d(np.asarray(d_p, dtype=float))
        x = model.simulate(particles.thetas, d, rng)
        return float(w @ x.mean(axis=-1))
    raise ValueError(f"unknown particle summary {kind!r}")
