"""End-to-end design procedures producing reproducible experiment records.

``two_stage_design`` estimates the posterior from past data with ABC-PMC and
then runs a fixed-J design chain that draws parameters from the weighted
particle set.  ``augmented_lf_design`` runs the one-shot likelihood-free
augmented chain, and ``oracle_report`` tabulates the closed-form criteria on a
grid for side-by-side checks.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diagnostics as diag
from .abc import STALL_CAP, ABCError, ABCKernel, abc_pmc_run
from .mcmc import BlockSampler, DesignProposal, JSchedule, run_sampler
from .model import (LinearGaussianScenario, analytic_expected_utility, argmax_ties,
                    grid_points)
from .sources import ParticleSource, SmoothedParticleSource
from .utility import (CallableUtility, UtilityError, UtilitySpec, make_utility,
                      particle_summary_utility, update_posterior_particles)

LF_J_WARN = 5


class PipelineError(RuntimeError):
    """A stage failed; ``record`` holds everything completed before the failure."""

    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


# ---------------------------------------------------------------------------
# configuration and records


@dataclass(frozen=True)
class PMCConfig:
    """Stage-one settings.  ``schedule`` defaults to ``sigma * (16, 8, 4, 2, 1)``."""

    particles: int = 5000
    schedule: tuple | None = None
    family: str = "uniform"
    stall_cap: int = STALL_CAP

    def resolved_schedule(self, model):
        if self.schedule is not None:
            return tuple(float(e) for e in self.schedule)
        sigma = getattr(model, "sigma", 1.0)
        return tuple(sigma * f for f in (16.0, 8.0, 4.0, 2.0, 1.0))


@dataclass(frozen=True)
class ChainConfig:
    """Stage-two settings.

    ``strict`` replaces the treat-as-exact particle proposal with a
    kernel-smoothed particle density plus the likelihood/prior correction.
    """

    J: int = 100
    iterations: int = 100_000
    thin: int = 1
    strict: bool = False
    utility: UtilitySpec = field(default_factory=UtilitySpec)


@dataclass(frozen=True)
class LFConfig:
    J: int = 1
    M: int = 1
    epsilon: float = 1.41
    family: str = "uniform"
    iterations: int = 1_000_000
    thin: int = 1
    utility: UtilitySpec = field(default_factory=UtilitySpec)


@dataclass
class ExperimentRecord:
    """Everything needed to inspect and replay a run.

    ``stages`` maps stage names to their raw outputs (particle sets, chain
    outputs); ``diagnostics`` and ``modes`` are plain data ready for JSON.
    """

    scenario: dict
    algo: str
    config: dict
    seed: int | None
    stages: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    modes: list = field(default_factory=list)
    wall_clock: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    complete: bool = True

    @property
    def draws(self):
        chain = self.stages.get("chain")
        return None if chain is None else chain.draws

    def summary(self):
        """JSON-ready summary (raw stage outputs omitted)."""
        return {
            "algo": self.algo,
            "seed": self.seed,
            "complete": self.complete,
            "scenario": self.scenario,
            "config": self.config,
            **self.diagnostics,
            "mode": self.modes,
            "wall_clock_seconds": self.wall_clock,
            "flags": list(self.flags),
            "warnings": list(self.warnings),
        }


def _jsonable(cfg):
    out = {}
    for key, val in asdict(cfg).items():
        out[key] = list(val) if isinstance(val, tuple) else val
    return out


# ---------------------------------------------------------------------------
# diagnostics shared by the CLI


def design_modes(draws, bounds, weights=None):
    """KDE mode of each design coordinate, reflected at the box edges."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    lo, hi = bounds
    modes, curves = [], []
    for i in range(draws.shape[1]):
        res = diag.kde_mode(draws[:, i], diag.KDEConfig(lower=float(lo[i]), upper=float(hi[i])),
                            weights)
        modes.append(res.mode)
        curves.append((res.grid, res.density))
    return modes, curves


def chain_diagnostics(out):
    """Acceptance rate and IAT per design coordinate (``None`` where undefined)."""
    iat = []
    for i in range(out.draws.shape[1] if out.draws.ndim == 2 else 0):
        try:
            iat.append(diag.iat_geyer(out.draws[:, i]))
        except ValueError:
            iat.append(None)
    return {"acceptance_rate": out.acceptance_rate, "iat": iat, "ess_final": None,
            "n_accepted": out.n_accepted, "n_proposed": out.n_proposed,
            "J_final": out.J_final, "positivity_retries": out.retries}


# ---------------------------------------------------------------------------
# utilities


def particle_update_utility(particles, model, kernel, M, rng, shift=0.0, n_sub=200):
    """Likelihood-free utility: log reduction of the particle covariance trace.

    Each call reweights a fixed subsample of ``n_sub`` posterior particles by
    the kernel between the block's ``z`` and ``M`` simulated replicates, and
    returns ``log tr Cov(base) - log tr Cov(updated) + shift``.  Degenerate
    updates score ``-inf`` and are rejected by the chain.
    """
    from .abc import PosteriorParticleSet

    idx = np.sort(rng.choice(len(particles), size=min(n_sub, len(particles)), replace=False,
                             p=particles.weights))
    base = PosteriorParticleSet(particles.thetas[idx], np.ones(idx.size))
    log_tr0 = math.log(-particle_summary_utility(base, "trace-variance"))

    def fn(z, d_rows, theta):
        out = np.empty(z.shape[0])
        for r in range(z.shape[0]):
            try:
                upd = update_posterior_particles(base, z[r], d_rows[r], kernel, M, model, rng)
                out[r] = log_tr0 - math.log(-particle_summary_utility(upd, "trace-variance"))
            except (UtilityError, ValueError):
                out[r] = -math.inf
        return out + shift

    return CallableUtility(fn)


def _stage2_utility(model, spec):
    if isinstance(model, LinearGaussianScenario):
        return make_utility(model, spec)
    raise ValueError("non-conjugate model: pass a utility built with particle_update_utility")


# ---------------------------------------------------------------------------
# procedures


def run_pmc_stage(model, stage1, rng, record):
    t0 = time.perf_counter()
    schedule = stage1.resolved_schedule(model)
    try:
        particles = abc_pmc_run(model, ABCKernel(stage1.family, schedule[0]), schedule,
                                stage1.particles, model.prior_data, rng,
                                stall_cap=stage1.stall_cap)
    except ABCError as exc:
        record.complete = False
        record.flags.append(f"stage 1 failed: {exc}")
        if exc.partial is not None:
            record.stages["posterior"] = exc.partial
        record.wall_clock["stage1"] = time.perf_counter() - t0
        raise PipelineError(str(exc), record) from exc
    record.stages["posterior"] = particles
    record.wall_clock["stage1"] = time.perf_counter() - t0
    record.diagnostics["posterior_mean"] = (particles.weights @ particles.thetas).tolist()
    record.diagnostics["posterior_ess"] = particles.ess
    record.diagnostics["pmc_counters"] = [list(c) for c in particles.counters]
    return particles


def two_stage_design(model, stage1=None, stage2=None, rng=None, seed=None, utility=None,
                     progress=False):
    """ABC-PMC posterior estimate followed by a fixed-J annealed design chain.

    Parameters
    ----------
    model : LinearGaussianScenario or Model
        Needs past observations (``model.prior_data``) for stage one.
    stage1, stage2 : PMCConfig, ChainConfig
    rng : numpy.random.Generator
        Defaults to ``default_rng(seed)``.
    utility : optional
        Utility object for stage two; built from ``stage2.utility`` for
        conjugate models.

    Raises
    ------
    PipelineError
        When stage one cannot finish; the error carries the partial record.
    """
    stage1 = stage1 or PMCConfig()
    stage2 = stage2 or ChainConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    record = ExperimentRecord(model.snapshot(), "two-stage",
                              {"stage1": _jsonable(stage1), "stage2": _jsonable(stage2)}, seed)
    particles = run_pmc_stage(model, stage1, rng, record)

    t0 = time.perf_counter()
    utility = utility or _stage2_utility(model, stage2.utility)
    if stage2.strict:
        source = SmoothedParticleSource.from_particles(particles, rng=rng)
        sampler = BlockSampler.prior_obs(model, utility, source, stage2.utility)
    else:
        source = ParticleSource.from_particles(particles)
        sampler = BlockSampler.plain(model, utility, stage2.utility, source)
    proposal = DesignProposal.for_model(model, "uniform")
    out = run_sampler(sampler, proposal, JSchedule.fixed(stage2.J), stage2.iterations, rng,
                      thin=stage2.thin, progress=progress, seed=seed)
    record.stages["chain"] = out
    record.wall_clock["stage2"] = time.perf_counter() - t0
    record.flags.extend(out.flags)
    _finish_chain_record(record, out, model)
    return record


def augmented_lf_design(model, config=None, rng=None, seed=None, utility=None, progress=False):
    """Augmented likelihood-free design chain with the parameter drawn from the prior.

    Past data enter only through ``M`` simulated replicates and the smoothing
    kernel.  A warning is raised for ``J > 5``, where the joint acceptance of
    ``J`` kernel hits makes the chain all but frozen.
    """
    config = config or LFConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    record = ExperimentRecord(model.snapshot(), "lf-augmented", _jsonable(config), seed)
    if config.J > LF_J_WARN:
        msg = (f"J={config.J} with the augmented likelihood-free sampler: acceptance decays "
               "geometrically in J; use J <= 5 or the two-stage procedure")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        record.warnings.append(msg)
    t0 = time.perf_counter()
    utility = utility or _stage2_utility(model, config.utility)
    kernel = ABCKernel(config.family, config.epsilon)
    sampler = BlockSampler.likelihood_free(model, utility, kernel, config.M, config.utility)
    proposal = DesignProposal.for_model(model, "uniform")
    out = run_sampler(sampler, proposal, JSchedule.fixed(config.J), config.iterations, rng,
                      thin=config.thin, progress=progress, seed=seed)
    record.stages["chain"] = out
    record.wall_clock["chain"] = time.perf_counter() - t0
    record.flags.extend(out.flags)
    _finish_chain_record(record, out, model)
    return record


def _finish_chain_record(record, out, model):
    record.diagnostics.update(chain_diagnostics(out))
    if len(out.draws) >= diag.MIN_KDE_DRAWS:
        record.modes, _ = design_modes(out.draws, model.bounds)
    else:
        record.flags.append("too few stored draws for a mode estimate")


@dataclass
class OracleReport:
    grid: np.ndarray        # (G, n) design points
    psi: np.ndarray         # D_B determinant per point
    utility: np.ndarray     # closed-form expected utility per point
    argmax: np.ndarray      # (m, n) designs tying for the maximum


def oracle_report(model, resolution=0.01):
    """Grid of ``(d, Psi(d), U*(d))`` with every argmax design.  Deterministic."""
    t0 = time.perf_counter()
    grid = grid_points(model, resolution)
    sign, logdet = np.linalg.slogdet(model.information(grid))
    psi = sign * np.exp(logdet)
    ustar = analytic_expected_utility(model, grid)
    best = argmax_ties(logdet, rtol=1e-9)
    rep = OracleReport(grid, psi, ustar, grid[best])
    record = ExperimentRecord(model.snapshot(), "oracle", {"resolution": resolution}, None)
    record.stages["oracle"] = rep
    record.modes = rep.argmax.tolist()
    record.diagnostics = {"argmax": rep.argmax.tolist(), "psi_max": float(psi[best[0]]),
                          "utility_max": float(ustar[best[0]])}
    record.wall_clock["oracle"] = time.perf_counter() - t0
    return record
