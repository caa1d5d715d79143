"""Probability models and closed-form oracles.

The built-in model is the conjugate linear-Gaussian polynomial regression

    z | theta, d ~ N(D theta, sigma2 I),   theta ~ N(theta0, sigma2 R^-1),

with past observations ``y`` taken at design points ``xi``.  Everything the
samplers are checked against (posteriors, the expected Shannon information
and the D_B determinant) is computed here in closed form.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

LOG_2PI = math.log(2.0 * math.pi)

GRID_CAP = 10_000_000


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class Design:
    """An exact n-point design inside a rectangular box (default ``[-1, 1]^n``)."""

    points: tuple
    lower: float | tuple = -1.0
    upper: float | tuple = 1.0

    def __post_init__(self):
        pts = np.atleast_1d(np.asarray(self.points, dtype=float))
        if pts.ndim != 1 or pts.size < 1:
            raise ModelError("design needs at least one coordinate")
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), pts.shape)
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), pts.shape)
        if np.any(pts < lo) or np.any(pts > hi) or not np.all(np.isfinite(pts)):
            raise ModelError(f"design {pts.tolist()} outside [{lo.tolist()}, {hi.tolist()}]")
        object.__setattr__(self, "points", tuple(float(v) for v in pts))
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))

    @property
    def n(self):
        return len(self.points)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.points, dtype=dtype)


@dataclass(frozen=True)
class ObservationSet:
    """Observed (or simulated) responses together with the designs they were taken at."""

    values: np.ndarray
    at: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        a = np.atleast_1d(np.asarray(self.at, dtype=float))
        if v.shape != a.shape:
            raise ModelError(f"{v.size} observations but {a.size} design points")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "at", a)

    def __len__(self):
        return self.values.size

    @classmethod
    def empty(cls):
        return cls(np.empty(0), np.empty(0))


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    """Multivariate normal law with cached precision and Cholesky factor."""

    mean: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray = field(default=None)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        k = mean.size
        if cov.shape != (k, k):
            raise ModelError(f"covariance shape {cov.shape} does not match mean of length {k}")
        scale = np.max(np.abs(cov))
        if np.max(np.abs(cov - cov.T)) > 1e-10 * scale:
            raise ModelError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError as exc:
            raise ModelError("covariance is not positive definite") from exc
        prec = self.precision
        if prec is None:
            prec = linalg.cho_solve((chol, True), np.eye(k))
        prec = 0.5 * (np.asarray(prec, dtype=float) + np.asarray(prec, dtype=float).T)
        if np.max(np.abs(cov @ prec - np.eye(k))) > 1e-8:
            raise ModelError("covariance and precision are not inverse to each other")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_logdet", 2.0 * float(np.sum(np.log(np.diag(chol)))))

    @classmethod
    def from_precision(cls, mean, precision):
        prec = np.atleast_2d(np.asarray(precision, dtype=float))
        prec = 0.5 * (prec + prec.T)
        c = linalg.cholesky(prec, lower=True)
        cov = linalg.cho_solve((c, True), np.eye(prec.shape[0]))
        return cls(mean, 0.5 * (cov + cov.T), prec)

    @property
    def dim(self):
        return self.mean.size

    @property
    def chol(self):
        return self._chol

    @property
    def logdet_cov(self):
        return self._logdet

    def logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        r = theta - self.mean
        quad = np.einsum("...i,ij,...j->...", r, self.precision, r)
        return -0.5 * (self.dim * LOG_2PI + self._logdet + quad)

    def sample(self, rng, size=None):
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        eps = rng.standard_normal(shape + (self.dim,))
        return self.mean + eps @ self._chol.T

    def __eq__(self, other):
        if not isinstance(other, GaussianLaw):
            return NotImplemented
        return (np.allclose(self.mean, other.mean, rtol=0, atol=1e-10)
                and np.allclose(self.covariance, other.covariance, rtol=1e-10, atol=1e-12))

    __hash__ = None


# ---------------------------------------------------------------------------
# polynomial regression


def feature_map(d, degree=2):
    """Polynomial features ``(1, d, ..., d^degree)``; broadcasts over ``d``."""
    d = np.asarray(d, dtype=float)
    out = np.empty(d.shape + (degree + 1,))
    out[..., 0] = 1.0
    for j in range(1, degree + 1):
        out[..., j] = out[..., j - 1] * d
    return out


def design_matrix(design, degree=2):
    """Rows ``feature_map(d_i)`` of an n-point design, shape ``(..., n, k)``."""
    return feature_map(np.asarray(design, dtype=float), degree)


class Model:
    """Contract shared by every probability model.

    ``simulate`` must accept parameter arrays of shape ``(..., k)`` and design
    arrays of shape ``(..., n)`` broadcasting against each other, returning
    ``(..., n)`` responses.  ``log_density`` is optional; likelihood-free code
    only ever sees a :class:`SimulatorView`.
    """

    theta_dim: int

    def simulate(self, theta, design, rng):
        raise NotImplementedError

    def prior_sample(self, rng, size=None):
        raise NotImplementedError

    def prior_logpdf(self, theta):
        raise NotImplementedError

    def log_density(self, z, theta, design):
        raise NotImplementedError(f"{type(self).__name__} has no likelihood")

    @property
    def has_density(self):
        return type(self).log_density is not Model.log_density


class SimulatorView:
    """Simulate-only view of a model; deliberately has no ``log_density``."""

    def __init__(self, model):
        self._model = model
        self.theta_dim = model.theta_dim
        # design-box metadata is not likelihood information
        for name in ("bounds", "n", "sigma"):
            if hasattr(model, name):
                setattr(self, name, getattr(model, name))

    def simulate(self, theta, design, rng):
        return self._model.simulate(theta, design, rng)

    def prior_sample(self, rng, size=None):
        return self._model.prior_sample(rng, size)

    def prior_logpdf(self, theta):
        return self._model.prior_logpdf(theta)


def simulator_view(model):
    return model if isinstance(model, SimulatorView) else SimulatorView(model)


@dataclass(frozen=True, eq=False)
class LinearGaussianScenario(Model):
    """Conjugate polynomial regression with informative prior and past data.

    ``prior_points`` are design points whose ``f f^T`` build the prior
    precision scale ``R`` (plus ``ridge`` on the diagonal); the prior is
    ``N(theta0, sigma2 R^-1)``.
    """

    sigma2: float
    theta0: tuple
    prior_points: tuple = ()
    prior_xi: tuple = ()
    prior_y: tuple = ()
    n: int = 1
    degree: int = 2
    ridge: float = 1e-5
    lower: float | tuple = -1.0
    upper: float | tuple = 1.0
    name: str = "linear-gaussian"

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ModelError("sigma2 must be positive")
        k = self.degree + 1
        theta0 = np.asarray(self.theta0, dtype=float)
        if theta0.shape != (k,):
            raise ModelError(f"theta0 must have {k} entries")
        if len(self.prior_xi) != len(self.prior_y):
            raise ModelError("prior_data.xi and prior_data.y differ in length")
        if self.n < 1:
            raise ModelError("design.n must be >= 1")
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.n,)).copy()
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.n,)).copy()
        if np.any(lo >= hi):
            raise ModelError("design.lower must be below design.upper")
        Fp = feature_map(np.asarray(self.prior_points, dtype=float), self.degree).reshape(-1, k)
        R = Fp.T @ Fp + self.ridge * np.eye(k)
        if not np.isfinite(np.linalg.cond(R)):
            raise ModelError("non-invertible information matrix")
        K = feature_map(np.asarray(self.prior_xi, dtype=float), self.degree).reshape(-1, k)
        y = np.asarray(self.prior_y, dtype=float)
        set_ = lambda key, val: object.__setattr__(self, key, val)  # noqa: E731
        set_("k", k)
        set_("theta_dim", k)
        set_("theta0_vec", theta0)
        set_("R", R)
        set_("K", K)
        set_("L", K.T @ K)
        set_("y_vec", y)
        set_("bounds", (lo, hi))
        set_("sigma", math.sqrt(self.sigma2))
        set_("prior", GaussianLaw.from_precision(theta0, R / self.sigma2))

    # -- model contract ----------------------------------------------------

    def simulate(self, theta, design, rng):
        F = design_matrix(design, self.degree)
        mean = np.einsum("...nk,...k->...n", F, np.asarray(theta, dtype=float))
        return mean + self.sigma * rng.standard_normal(mean.shape)

    def log_density(self, z, theta, design):
        F = design_matrix(design, self.degree)
        mean = np.einsum("...nk,...k->...n", F, np.asarray(theta, dtype=float))
        r = np.asarray(z, dtype=float) - mean
        s = r.shape[-1]
        return -0.5 * (s * (LOG_2PI + math.log(self.sigma2)) + np.sum(r * r, axis=-1) / self.sigma2)

    def prior_sample(self, rng, size=None):
        return self.prior.sample(rng, size)

    def prior_logpdf(self, theta):
        return self.prior.logpdf(theta)

    # -- helpers -----------------------------------------------------------

    @property
    def prior_data(self):
        return ObservationSet(self.y_vec, np.asarray(self.prior_xi, dtype=float))

    def make_design(self, points):
        lo, hi = self.bounds
        return Design(points, tuple(lo), tuple(hi))

    def information(self, design):
        """``M + L + R`` for a design (batched over leading axes)."""
        F = design_matrix(design, self.degree)
        return np.einsum("...ni,...nj->...ij", F, F) + self.L + self.R

    def snapshot(self):
        lo, hi = self.bounds
        return {
            "model": {
                "kind": "linear-gaussian",
                "degree": self.degree,
                "sigma2": self.sigma2,
                "theta0": self.theta0_vec.tolist(),
                "prior_points": list(map(float, self.prior_points)),
                "ridge": self.ridge,
            },
            "prior_data": {"xi": list(map(float, self.prior_xi)), "y": self.y_vec.tolist()},
            "design": {"n": self.n, "lower": lo.tolist(), "upper": hi.tolist()},
            "name": self.name,
        }


# ---------------------------------------------------------------------------
# closed forms


def _design_array(design):
    return np.atleast_1d(np.asarray(design, dtype=float))


def _conjugate(scenario, info, rhs):
    try:
        c = linalg.cho_factor(info, lower=True)
    except linalg.LinAlgError as exc:
        raise ModelError("non-invertible information matrix") from exc
    mean = linalg.cho_solve(c, rhs)
    return GaussianLaw.from_precision(mean, info / scenario.sigma2)


def analytic_posterior(scenario, y=None):
    """Conjugate posterior of theta given past data ``y`` (defaults to the scenario's)."""
    if y is None:
        y = scenario.prior_data
    if len(y) == 0:
        return scenario.prior
    K = design_matrix(y.at, scenario.degree)
    info = K.T @ K + scenario.R
    rhs = K.T @ y.values + scenario.R @ scenario.theta0_vec
    return _conjugate(scenario, info, rhs)


def analytic_updated_posterior(scenario, y=None, z=None, design=None):
    """Posterior of theta given past data ``y`` and future data ``z`` at ``design``."""
    if y is None:
        y = scenario.prior_data
    if z is None or len(np.atleast_1d(z)) == 0:
        return analytic_posterior(scenario, y)
    zv = np.atleast_1d(np.asarray(getattr(z, "values", z), dtype=float))
    dv = _design_array(design if design is not None else z.at)
    K = design_matrix(y.at, scenario.degree) if len(y) else np.zeros((0, scenario.k))
    D = design_matrix(dv, scenario.degree)
    info = D.T @ D + K.T @ K + scenario.R
    rhs = D.T @ zv + K.T @ y.values + scenario.R @ scenario.theta0_vec
    return _conjugate(scenario, info, rhs)


def db_criterion(scenario, design):
    """Bayesian D-optimality determinant ``det(M + L + R)``."""
    return float(np.linalg.det(scenario.information(_design_array(design))))


def _logdet_info(scenario, design):
    info = scenario.information(design)
    sign, logdet = np.linalg.slogdet(info)
    return logdet


def analytic_expected_utility(scenario, design):
    """Expected log updated-posterior density of the true parameter, in closed form."""
    k = scenario.k
    logdet = _logdet_info(scenario, _design_array(design))
    return -0.5 * k * LOG_2PI - 0.5 * k + 0.5 * (logdet - k * math.log(scenario.sigma2))


def expected_log_prior(scenario, law=None):
    """``E[log p(theta)]`` for theta drawn from ``law`` (default: posterior given past data)."""
    if law is None:
        law = analytic_posterior(scenario)
    prior = scenario.prior
    r = law.mean - prior.mean
    quad = float(np.trace(prior.precision @ law.covariance) + r @ prior.precision @ r)
    return -0.5 * (prior.dim * LOG_2PI + prior.logdet_cov + quad)


def grid_points(scenario, resolution):
    """Lexicographically ordered grid over the design box."""
    if resolution <= 0:
        raise ModelError("resolution must be positive")
    lo, hi = scenario.bounds
    axes = []
    for a, b in zip(lo, hi):
        m = int(math.floor((b - a) / resolution + 1e-9))
        ax = np.round(a + resolution * np.arange(m + 1), 12)
        axes.append(ax)
    cells = math.prod(len(ax) for ax in axes)
    if scenario.n > 3 or cells > GRID_CAP:
        raise ModelError(f"grid too large: {cells} cells over {scenario.n} coordinates")
    return np.array(list(itertools.product(*axes)), dtype=float)


def argmax_ties(values, rtol=1e-9):
    """Indices of all entries tying with the maximum (relative tolerance ``rtol``)."""
    values = np.asarray(values)
    vmax = values.max()
    return np.flatnonzero(values >= vmax - rtol * abs(vmax))


def grid_search_optimum(scenario, resolution=0.01):
    """Exhaustive D_B argmax over the grid; ties go to the lexicographically smallest design."""
    grid = grid_points(scenario, resolution)
    logdet = np.linalg.slogdet(scenario.information(grid))[1]
    best = argmax_ties(logdet)[0]
    return scenario.make_design(grid[best])


# ---------------------------------------------------------------------------
# built-in scenarios


def s1_quadratic():
    """One future trial; prior worth one trial at 0; one past observation y=40 at -1."""
    return LinearGaussianScenario(
        sigma2=2.0, theta0=(0.0, 0.0, 0.0), prior_points=(0.0,), prior_xi=(-1.0,),
        prior_y=(40.0,), n=1, name="s1-quadratic")


def s2_quadratic():
    """Two future trials; prior worth trials at -1 and 0; past data y=(-1, 160) at (-1, 1)."""
    return LinearGaussianScenario(
        sigma2=2.0, theta0=(0.0, 0.0, 0.0), prior_points=(-1.0, 0.0), prior_xi=(-1.0, 1.0),
        prior_y=(-1.0, 160.0), n=2, name="s2-quadratic")


def s3_fresh():
    """Three future trials with only the ridge as prior information and no past data."""
    return LinearGaussianScenario(
        sigma2=2.0, theta0=(0.0, 0.0, 0.0), n=3, name="s3-fresh")


BUILTIN_SCENARIOS = {
    "s1-quadratic": s1_quadratic,
    "s2-quadratic": s2_quadratic,
    "s3-fresh": s3_fresh,
}


def scenario_from_config(cfg):
    """Build a scenario from a nested mapping with ``model``/``prior_data``/``design`` tables."""
    allowed = {"model", "prior_data", "design", "name"}
    extra = set(cfg) - allowed
    if extra:
        raise ModelError(f"unknown scenario keys: {sorted(extra)}")
    m = dict(cfg.get("model", {}))
    kind = m.pop("kind", "linear-gaussian")
    if kind != "linear-gaussian":
        raise ModelError(f"unsupported model.kind {kind!r}")
    known = {"degree", "sigma2", "theta0", "prior_points", "ridge"}
    if set(m) - known:
        raise ModelError(f"unknown model keys: {sorted(set(m) - known)}")
    pd = dict(cfg.get("prior_data", {}))
    if set(pd) - {"xi", "y"}:
        raise ModelError(f"unknown prior_data keys: {sorted(set(pd) - {'xi', 'y'})}")
    ds = dict(cfg.get("design", {}))
    if set(ds) - {"n", "lower", "upper"}:
        raise ModelError(f"unknown design keys: {sorted(set(ds) - {'n', 'lower', 'upper'})}")
    degree = int(m.get("degree", 2))
    lower = ds.get("lower", -1.0)
    upper = ds.get("upper", 1.0)
    return LinearGaussianScenario(
        sigma2=float(m.get("sigma2", 1.0)),
        theta0=tuple(m.get("theta0", [0.0] * (degree + 1))),
        prior_points=tuple(m.get("prior_points", ())),
        prior_xi=tuple(pd.get("xi", ())),
        prior_y=tuple(pd.get("y", ())),
        n=int(ds.get("n", 1)),
        degree=degree,
        ridge=float(m.get("ridge", 1e-5)),
        lower=tuple(lower) if isinstance(lower, (list, tuple)) else float(lower),
        upper=tuple(upper) if isinstance(upper, (list, tuple)) else float(upper),
        name=str(cfg.get("name", "custom")),
    )
