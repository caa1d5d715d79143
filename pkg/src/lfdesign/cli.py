"""Command-line front end.

Loads a scenario (built-in name or TOML/JSON file), validates every option
before any computation, dispatches to an algorithm, and writes the draws,
a JSON summary, and plot-ready CSV files into ``--out``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import abc, diagnostics, mcmc, particles, pipeline
from ._io import atomic_write_text, csv_text
from .model import BUILTIN_SCENARIOS, ModelError, scenario_from_config
from .sources import analytic_posterior_source, default_theta_source
from .utility import KINDS, POSITIVITY, UtilitySpec, make_utility

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

ALGOS = ("muller", "annealed", "inhomogeneous", "sir", "rm", "smc", "lf-mcmc", "lf-augmented",
         "pmc-posterior", "two-stage", "oracle")
FULL_ITERATIONS = 100_000_000
FULL_PARTICLES = 20_000


class ConfigError(ValueError):
    """Invalid command-line configuration; the message lists every violation."""


@dataclass
class RunConfig:
    scenario: str
    algo: str
    iterations: int = 100_000
    thin: int = 1
    J: int | None = None
    J_delta: float = 1.0
    M: int = 1
    epsilon: float | None = None
    epsilon_schedule: list | None = None
    particles: int | None = None
    steps: int = 30
    delta_nu: float = 1.0
    seed: int = 0
    threads: int = 1
    out: str = "out"
    full: bool = False
    strict: bool = False
    resolution: float = 0.01
    utility: str = "shannon-log-ratio"
    positivity: str = "resample-until-positive"
    shift: float = 0.0
    progress: bool = True
    scenario_config: dict = field(default_factory=dict, repr=False)

    def echo(self):
        """Every field needed to replay the run."""
        out = {k: v for k, v in self.__dict__.items() if k not in ("scenario_config", "progress")}
        out["scenario_config"] = self.scenario_config
        return out


# defaults per algorithm where the flag is not given
_DEFAULT_J = {"annealed": 50, "inhomogeneous": 50, "sir": 50, "rm": 50, "smc": 50,
              "lf-augmented": 1, "two-stage": 100}


def build_parser():
    p = argparse.ArgumentParser(prog="lfdesign", description=__doc__.splitlines()[0])
    p.add_argument("--scenario", help="built-in name (%s) or a TOML/JSON file"
                   % ", ".join(BUILTIN_SCENARIOS))
    p.add_argument("--algo", choices=ALGOS)
    p.add_argument("--iterations", type=int, help="chain length (default 1e5; 1e8 with --full)")
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--J", type=int, help="number of utility blocks (maximum J for schedules)")
    p.add_argument("--J-delta", type=float, default=1.0, dest="J_delta",
                   help="growth rate of the logarithmic J schedule")
    p.add_argument("--M", type=int, default=1, help="pseudo-data replicates per parameter")
    p.add_argument("--epsilon", type=float, help="kernel scale (default: sigma)")
    p.add_argument("--epsilon-schedule", dest="epsilon_schedule",
                   help="comma-separated decreasing ABC-PMC schedule (default 16,8,4,2,1 x sigma)")
    p.add_argument("--particles", type=int,
                   help="particle count (default 5000 for ABC, 2000 for design particles)")
    p.add_argument("--steps", type=int, default=30, help="SIR/RM iterations (J ramp length)")
    p.add_argument("--delta-nu", type=float, default=1.0, dest="delta_nu",
                   help="SMC exponent step; 1 means integer J only")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--full", action="store_true", help="long-run chain and particle counts (1e8 iterations)")
    p.add_argument("--strict", action="store_true",
                   help="two-stage: smoothed particle density with correction terms")
    p.add_argument("--resolution", type=float, default=0.01, help="oracle grid spacing")
    p.add_argument("--utility", default="shannon-log-ratio", help="one of %s" % ", ".join(KINDS))
    p.add_argument("--positivity", default="resample-until-positive",
                   help="one of %s" % ", ".join(POSITIVITY))
    p.add_argument("--shift", type=float, default=0.0)
    p.add_argument("--quiet", action="store_true", help="suppress progress on stderr")
    return p


def _load_scenario_config(name, errors):
    if name in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[name]().snapshot()
    if not os.path.isfile(name):
        errors.append(f"scenario {name!r} is neither a built-in name nor a readable file")
        return None
    try:
        with open(name, "rb") as fh:
            data = fh.read()
        if name.endswith(".json"):
            return json.loads(data)
        return tomllib.loads(data.decode())
    except (OSError, ValueError) as exc:
        errors.append(f"cannot parse scenario file {name!r}: {exc}")
        return None


def parse_and_validate(argv=None):
    """Parse ``argv`` into a :class:`RunConfig`, reporting every violation at once."""
    ns = build_parser().parse_args(argv)
    errors = []
    if ns.scenario is None:
        errors.append("missing --scenario")
    if ns.algo is None:
        errors.append("missing --algo")
    scen = _load_scenario_config(ns.scenario, errors) if ns.scenario else None

    iterations = ns.iterations
    if iterations is None:
        iterations = FULL_ITERATIONS if ns.full else 100_000
    J = ns.J if ns.J is not None else _DEFAULT_J.get(ns.algo, 1)
    if ns.particles is not None:
        n_particles = ns.particles
    elif ns.algo in ("pmc-posterior", "two-stage"):
        n_particles = FULL_PARTICLES if ns.full else 5000
    else:
        n_particles = 2000

    if iterations < 0:
        errors.append("iterations must be >= 0")
    if ns.thin < 1:
        errors.append("thin must be >= 1")
    if J < 1:
        errors.append("J must be >= 1")
    if not ns.J_delta > 0:
        errors.append("J-delta must be > 0 (the J schedule may not decrease)")
    if ns.M < 1:
        errors.append("M must be >= 1")
    if ns.epsilon is not None and not ns.epsilon > 0:
        errors.append("epsilon must be > 0")
    schedule = None
    if ns.epsilon_schedule is not None:
        try:
            schedule = [float(s) for s in ns.epsilon_schedule.split(",")]
            abc.validate_schedule(schedule)
        except ValueError as exc:
            msg = str(exc)
            if "decreasing" in msg:
                msg = "epsilon schedule must decrease"
            errors.append(f"epsilon-schedule {ns.epsilon_schedule!r}: {msg}")
    if n_particles < 2:
        errors.append("particles must be >= 2")
    if ns.steps < 1:
        errors.append("steps must be >= 1")
    if not 0 < ns.delta_nu <= 1:
        errors.append("delta-nu must lie in (0, 1]")
    if ns.seed < 0:
        errors.append("seed must be >= 0")
    if ns.threads < 1:
        errors.append("threads must be >= 1")
    if not ns.resolution > 0:
        errors.append("resolution must be > 0")
    if ns.utility not in KINDS:
        errors.append(f"unknown utility {ns.utility!r}")
    if ns.positivity not in POSITIVITY:
        errors.append(f"unknown positivity {ns.positivity!r}")
    elif ns.positivity == "shift" and not ns.shift > 0:
        errors.append("shift must be > 0 with positivity 'shift'")
    if scen is not None:
        try:
            scenario_from_config(scen)
        except (ModelError, TypeError, ValueError) as exc:
            errors.append(f"scenario: {exc}")
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return RunConfig(
        scenario=ns.scenario, algo=ns.algo, iterations=iterations, thin=ns.thin, J=J,
        J_delta=ns.J_delta, M=ns.M, epsilon=ns.epsilon, epsilon_schedule=schedule,
        particles=n_particles, steps=ns.steps, delta_nu=ns.delta_nu, seed=ns.seed,
        threads=ns.threads, out=ns.out, full=ns.full, strict=ns.strict,
        resolution=ns.resolution, utility=ns.utility, positivity=ns.positivity,
        shift=ns.shift, progress=not ns.quiet, scenario_config=scen)


# ---------------------------------------------------------------------------
# dispatch


def _ess_chain(draws, iat):
    vals = [v for v in iat if v is not None]
    return len(draws) / max(vals) if vals else None


def _run_algo(cfg, model, rng):
    """Returns ``(record, draw_rows, draw_header, weights)``."""
    spec = UtilitySpec(cfg.utility, cfg.positivity, cfg.shift)
    n = model.n
    dcols = [f"d_{i + 1}" for i in range(n)]
    kw = dict(thin=cfg.thin, progress=cfg.progress, seed=cfg.seed)
    eps = cfg.epsilon if cfg.epsilon is not None else model.sigma

    if cfg.algo == "oracle":
        return pipeline.oracle_report(model, cfg.resolution), None, None, None

    if cfg.algo == "two-stage":
        stage1 = pipeline.PMCConfig(cfg.particles, tuple(cfg.epsilon_schedule)
                                    if cfg.epsilon_schedule else None)
        stage2 = pipeline.ChainConfig(cfg.J, cfg.iterations, cfg.thin, cfg.strict, spec)
        rec = pipeline.two_stage_design(model, stage1, stage2, np.random.default_rng(cfg.seed),
                                        cfg.seed, progress=cfg.progress)
        return rec, *_chain_rows(rec.stages["chain"], dcols)

    if cfg.algo == "lf-augmented":
        conf = pipeline.LFConfig(cfg.J, cfg.M, eps, "uniform", cfg.iterations, cfg.thin, spec)
        rec = pipeline.augmented_lf_design(model, conf, rng, cfg.seed, progress=cfg.progress)
        return rec, *_chain_rows(rec.stages["chain"], dcols)

    if cfg.algo == "pmc-posterior":
        sched = cfg.epsilon_schedule or pipeline.PMCConfig().resolved_schedule(model)
        rec = pipeline.ExperimentRecord(model.snapshot(), cfg.algo, {}, cfg.seed)
        pipeline.run_pmc_stage(model, pipeline.PMCConfig(cfg.particles, tuple(sched)), rng, rec)
        return rec, None, None, None

    if cfg.algo == "lf-mcmc":
        rec = pipeline.ExperimentRecord(model.snapshot(), cfg.algo, {}, cfg.seed)
        kernel = abc.ABCKernel("uniform", eps)
        post = analytic_posterior_source(model).law
        walk = abc.GaussianRandomWalk(0.25 * post.covariance)
        draws, rate = abc.lf_mcmc_run(model, kernel, cfg.M, model.prior_data, walk,
                                      cfg.iterations, rng, theta_init=post.mean, thin=cfg.thin)
        rec.stages["theta_draws"] = draws
        rec.diagnostics = {"acceptance_rate": rate, "iat": [], "ess_final": None,
                           "posterior_mean": draws.mean(axis=0).tolist()}
        rows = [[i * cfg.thin + 1, *d] for i, d in enumerate(draws)]
        return rec, rows, ["iter"] + [f"theta_{i + 1}" for i in range(draws.shape[1])], None

    utility = make_utility(model, spec)
    sampler = mcmc.BlockSampler.plain(model, utility, spec, default_theta_source(model))
    proposal = mcmc.DesignProposal.for_model(model)
    rec = pipeline.ExperimentRecord(model.snapshot(), cfg.algo, {}, cfg.seed)

    if cfg.algo in ("muller", "annealed", "inhomogeneous"):
        sched = {"muller": lambda: mcmc.JSchedule.fixed(1),
                 "annealed": lambda: mcmc.JSchedule.fixed(cfg.J),
                 "inhomogeneous": lambda: mcmc.JSchedule.logarithmic(cfg.J_delta, cfg.J)}
        out = mcmc.run_sampler(sampler, proposal, sched[cfg.algo](), cfg.iterations, rng, **kw)
        rec.stages["chain"] = out
        rec.flags.extend(out.flags)
        rec.wall_clock["chain"] = out.wall_clock
        pipeline._finish_chain_record(rec, out, model)
        return rec, *_chain_rows(out, dcols)

    if cfg.algo in ("sir", "rm"):
        run = particles.run_sir if cfg.algo == "sir" else particles.run_rm
        out = run(sampler, cfg.particles, mcmc.JSchedule.ramp(cfg.J, cfg.steps), cfg.steps, rng,
                  proposal, seed=cfg.seed)
    else:
        out = particles.run_smc(sampler, cfg.particles,
                                particles.SMCSchedule(cfg.J, cfg.delta_nu), rng, proposal,
                                seed=cfg.seed)
    rec.stages["particles"] = out
    rec.wall_clock["particles"] = out.wall_clock
    w = out.weights
    rec.diagnostics = {"acceptance_rate": None, "iat": [], "ess_final": out.particles.ess,
                       "ess_trace": out.ess_trace,
                       "weighted_mean": out.weighted_mean().tolist()}
    rec.modes, _ = pipeline.design_modes(out.designs, model.bounds, w)
    rows = [[i + 1, *d, wi] for i, (d, wi) in enumerate(zip(out.designs, w))]
    return rec, rows, ["iter"] + dcols + ["weight"], w


def _chain_rows(out, dcols):
    rows = [[int(t), *d, u] for t, d, u in zip(out.iters, out.draws, out.utility)]
    return rows, ["iter"] + dcols + ["utility"], None


def _write_outputs(cfg, model, rec, rows, header, weights):
    out = cfg.out
    if rows is not None:
        atomic_write_text(os.path.join(out, "draws.csv"), csv_text(header, rows))
    posterior = rec.stages.get("posterior")
    if posterior is not None:
        path = os.path.join(out, "particles.csv")
        abc.write_particles(path, posterior)
        rec.diagnostics["posterior_particles"] = "particles.csv"
    oracle = rec.stages.get("oracle")
    if oracle is not None:
        ocols = [f"d_{i + 1}" for i in range(model.n)] + ["psi", "utility"]
        orows = np.column_stack([oracle.grid, oracle.psi, oracle.utility]).tolist()
        atomic_write_text(os.path.join(out, "oracle.csv"), csv_text(ocols, orows))

    designs = None
    if "chain" in rec.stages:
        designs = rec.stages["chain"].draws
    elif "particles" in rec.stages:
        designs = rec.stages["particles"].designs
    if designs is not None and len(designs) >= diagnostics.MIN_KDE_DRAWS:
        _, curves = pipeline.design_modes(designs, model.bounds, weights)
        for i, (grid, dens) in enumerate(curves):
            atomic_write_text(os.path.join(out, f"kde_d{i + 1}.csv"),
                              csv_text(["x", "density"], np.column_stack([grid, dens]).tolist()))
        if model.n == 2:
            cell = 0.05
            cells = diagnostics.freq2d(designs, cell)
            atomic_write_text(os.path.join(out, "bubble.csv"), csv_text(
                ["cx", "cy", "relfreq"], [[cx, cy, f] for (cx, cy), f in cells]))
            rec.diagnostics["modes_2d"] = [list(c) for c, _ in
                                           diagnostics.freq2d_modes(cells, cell)]


def _summary(cfg, rec):
    s = rec.summary()
    s["algo"] = cfg.algo
    s["seed"] = cfg.seed
    s["config"] = cfg.echo()
    s.setdefault("iat", [])
    if s.get("ess_final") is None and "chain" in rec.stages:
        s["ess_final"] = _ess_chain(rec.stages["chain"].draws, s["iat"])
    s.setdefault("ess_final", None)
    s.setdefault("acceptance_rate", None)
    return s


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _clean(obj):
    """Replace non-finite floats by ``None`` so the summary is strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_summary(path, summary):
    text = json.dumps(_clean(json.loads(json.dumps(summary, default=_json_default))), indent=2,
                      sort_keys=True)
    atomic_write_text(path, text + "\n")


def run(cfg):
    """Execute a validated config; returns the process exit status."""
    model = scenario_from_config(cfg.scenario_config)
    rng = np.random.default_rng(cfg.seed)
    try:
        rec, rows, header, weights = _run_algo(cfg, model, rng)
    except pipeline.PipelineError as exc:
        rec = exc.record
        _write_outputs(cfg, model, rec, None, None, None)
        write_summary(os.path.join(cfg.out, "summary.json"), _summary(cfg, rec))
        print(f"lfdesign: {exc}", file=sys.stderr)
        return 1
    if cfg.threads > 1:
        rec.warnings.append("threads > 1 requested; runs use a single random stream")
    _write_outputs(cfg, model, rec, rows, header, weights)
    write_summary(os.path.join(cfg.out, "summary.json"), _summary(cfg, rec))
    return 0


def main(argv=None):
    try:
        cfg = parse_and_validate(argv)
        return run(cfg)
    except ConfigError as exc:
        print(f"lfdesign: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"lfdesign: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
