"""Parameter proposal sources ``k(theta | y, xi)`` for the design samplers."""

import numpy as np

from .model import GaussianLaw, LinearGaussianScenario, analytic_posterior


class PriorSource:
    """Draws from the model prior; its density is the prior density."""

    kind = "prior"

    def __init__(self, model):
        self.model = model

    def sample(self, rng, size):
        return self.model.prior_sample(rng, size)

    def logpdf(self, theta):
        return self.model.prior_logpdf(theta)


class LawSource:
    """Wraps a :class:`GaussianLaw` (exact posterior or a broadened approximation)."""

    def __init__(self, law, kind="approximate"):
        self.law = law
        self.kind = kind

    def sample(self, rng, size):
        return self.law.sample(rng, size)

    def logpdf(self, theta):
        return self.law.logpdf(theta)


class ParticleSource:
    """Discrete draws from a weighted particle set; no density available."""

    kind = "particle-set"

    def __init__(self, thetas, weights):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        w = np.asarray(weights, dtype=float)
        if w.shape != (thetas.shape[0],) or np.any(w < 0) or not w.sum() > 0:
            raise ValueError("particle weights must be non-negative with positive sum")
        self.thetas = thetas
        self.weights = w / w.sum()
        self._cdf = np.cumsum(self.weights)
        self._cdf[-1] = 1.0

    @classmethod
    def from_particles(cls, particles):
        return cls(particles.thetas, particles.weights)

    def sample(self, rng, size):
        idx = np.searchsorted(self._cdf, rng.random(size), side="right")
        return self.thetas[np.minimum(idx, self.thetas.shape[0] - 1)]

    def logpdf(self, theta):
        raise TypeError("a particle-set source has no density")


def analytic_posterior_source(scenario):
    return LawSource(analytic_posterior(scenario), kind="analytic-posterior")


def broadened_posterior_source(scenario, scale=2.0):
    """Gaussian proposal centred on the exact posterior with SDs multiplied by ``scale``."""
    post = analytic_posterior(scenario)
    return LawSource(GaussianLaw(post.mean, scale ** 2 * post.covariance), kind="approximate")


def default_theta_source(model):
    """Exact posterior for conjugate models with past data, otherwise the prior."""
    if isinstance(model, LinearGaussianScenario) and len(model.prior_data):
        return analytic_posterior_source(model)
    return PriorSource(model)


class SmoothedParticleSource:
    """Gaussian-kernel smoothing of a weighted particle set, with a density.

    Each draw picks a particle by weight and adds ``N(0, h^2 Sigma)`` noise,
    ``Sigma`` being the weighted particle covariance and ``h`` Scott's factor
    ``n_eff^(-1/(k+4))``.  The density makes the prior-observation correction
    usable with particle output.  Sets larger than ``max_components`` are
    first thinned by systematic resampling so density evaluation stays cheap.
    """

    kind = "smoothed-particle-set"

    def __init__(self, thetas, weights, h=None, max_components=128, rng=None):
        from scipy import linalg

        from . import kernels

        self._kernels = kernels
        full = ParticleSource(thetas, weights)
        th, w = full.thetas, full.weights
        mean = w @ th
        r = th - mean
        cov = (r * w[:, None]).T @ r
        if th.shape[0] > max_components:
            rng = rng if rng is not None else np.random.default_rng(0)
            u = (rng.random() + np.arange(max_components)) / max_components
            idx = np.minimum(np.searchsorted(full._cdf, u, side="right"), th.shape[0] - 1)
            th, w = th[idx], np.full(max_components, 1.0 / max_components)
        self.base = ParticleSource(th, w)
        k = th.shape[1]
        n_eff = 1.0 / float(np.sum(w * w))
        self.h = n_eff ** (-1.0 / (k + 4)) if h is None else float(h)
        self.chol = linalg.cholesky(self.h ** 2 * 0.5 * (cov + cov.T), lower=True)
        self._linv = linalg.solve_triangular(self.chol, np.eye(k), lower=True)
        self._white = th @ self._linv.T
        self._logw = np.log(np.where(w > 0, w, np.finfo(float).tiny))
        self._lognorm = 0.5 * k * np.log(2.0 * np.pi) + float(np.sum(np.log(np.diag(self.chol))))

    @classmethod
    def from_particles(cls, particles, h=None, max_components=128, rng=None):
        return cls(particles.thetas, particles.weights, h, max_components, rng)

    def sample(self, rng, size):
        centers = self.base.sample(rng, size)
        return centers + rng.standard_normal(centers.shape) @ self.chol.T

    def logpdf(self, theta):
        pts = np.atleast_2d(theta) @ self._linv.T
        out = self._kernels.gauss_mixture_logsumexp(pts, self._white, self._logw) - self._lognorm
        return out if np.ndim(theta) > 1 else float(out[0])
