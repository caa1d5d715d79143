"""Exit-criteria suite.

Each test prints one ``[criterion N] PASS|FAIL`` line with the measured values
before asserting, so the outcome is visible in verbose logs either way.
"""

import time

import numpy as np
import pytest

from lfdesign import abc, cli, diagnostics, mcmc, particles, pipeline
from lfdesign import model as m
from lfdesign.utility import ShannonUtility, UtilitySpec, estimate_expected_utility

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

TABLE1 = {1.41: 0.0048, 2.82: 0.0092, 5.64: 0.0149, 11.28: 0.0163, 22.56: 0.0170}
TABLE2 = {50: 0.0628, 100: 0.0260, 200: 0.0078}
TABLE2_IAT = {50: 38.96, 100: 108.13, 200: 524.14}


@pytest.fixture
def report(capsys):
    def emit(n, ok, text):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}  {text}", flush=True)
    return emit


def within_factor(x, ref, f):
    return ref / f <= x <= ref * f


# ---------------------------------------------------------------------------


def test_criterion_1_two_stage_1d(report, s1):
    modes, times = [], []
    for seed in range(5):
        t0 = time.perf_counter()
        rec = pipeline.two_stage_design(s1, pipeline.PMCConfig(5000),
                                        pipeline.ChainConfig(J=100, iterations=100_000),
                                        seed=seed)
        times.append(time.perf_counter() - t0)
        modes.append(rec.modes[0])
    mean_mode = float(np.mean(modes))
    ok = abs(mean_mode - 1.0) <= 0.05 and max(times) < 120
    report(1, ok, f"seed-averaged KDE mode {mean_mode:.4f} (per seed "
                  f"{[round(v, 3) for v in modes]}), target 1.0 +/- 0.05; "
                  f"max runtime {max(times):.1f} s < 120 s")
    assert ok


def test_criterion_2_two_stage_2d(report, s2):
    t0 = time.perf_counter()
    rec = pipeline.two_stage_design(s2, pipeline.PMCConfig(5000),
                                    pipeline.ChainConfig(J=200, iterations=100_000), seed=0)
    runtime = time.perf_counter() - t0
    mass = diagnostics.mass_near(rec.draws, [[0.0, 1.0], [1.0, 0.0]], 0.15)
    # exact design marginal proportional to U(d)^200 on a 0.01 grid, for reference
    grid = m.grid_points(s2, 0.01)
    U = m.analytic_expected_utility(s2, grid) - m.expected_log_prior(s2)
    w = np.exp(200 * (np.log(U) - np.log(U.max())))
    w /= w.sum()
    near = np.minimum(np.abs(grid - [0, 1]).max(1), np.abs(grid - [1, 0]).max(1)) <= 0.15
    ok = mass >= 0.8 and runtime < 180
    report(2, ok, f"mass within Linf 0.15 of (0,1)/(1,0) = {mass:.3f} (need >= 0.8); "
                  f"exact U^200 marginal puts {w[near].sum():.3f} there; "
                  f"acceptance {rec.diagnostics['acceptance_rate']:.4f}; runtime {runtime:.1f} s")
    assert ok


def test_criterion_3_pmc_posterior(report, s1):
    t0 = time.perf_counter()
    ps = abc.abc_pmc_run(s1, "uniform", [f * s1.sigma for f in (16, 8, 4, 2, 1)], 5000,
                         s1.prior_data, np.random.default_rng(0))
    runtime = time.perf_counter() - t0
    mean = ps.weights @ ps.thetas
    truth = m.analytic_posterior(s1).mean
    dev = np.abs(mean - truth)
    ok = bool(np.all(dev < 1.0)) and runtime < 120
    report(3, ok, f"PMC mean {np.round(mean, 3).tolist()} vs analytic "
                  f"{np.round(truth, 4).tolist()}; |dev| {np.round(dev, 3).tolist()} "
                  f"(need < 1 each); ESS {ps.ess:.0f}; runtime {runtime:.1f} s")
    assert ok


def test_criterion_4_lf_epsilon_robustness(report, s1):
    util = ShannonUtility(s1)
    rates, modes, cand = {}, {}, {}
    for eps in TABLE1:
        rec = pipeline.augmented_lf_design(
            s1, pipeline.LFConfig(J=1, M=1, epsilon=eps, iterations=1_000_000), seed=0,
            utility=util)
        out = rec.stages["chain"]
        rates[eps] = out.acceptance_rate
        modes[eps] = rec.modes[0]
        cand[eps] = out.n_accepted / (out.n_proposed + out.retries)
    m_lo, m_hi = modes[1.41], modes[22.56]
    modes_ok = abs(m_lo - m_hi) <= 0.1 and abs(m_lo - 1) <= 0.1 and abs(m_hi - 1) <= 0.1
    eps_sorted = sorted(rates)
    mono = all(rates[a] <= rates[b] for a, b in zip(eps_sorted, eps_sorted[1:]))
    factor = all(within_factor(rates[e], TABLE1[e], 2.0) for e in TABLE1)
    ok = modes_ok and mono and factor
    report(4, ok, f"modes eps=1.41 {m_lo:.3f}, eps=22.56 {m_hi:.3f} (ok={modes_ok}); "
                  f"acceptance {[round(rates[e], 4) for e in eps_sorted]} vs table "
                  f"{[TABLE1[e] for e in eps_sorted]} (nondecreasing={mono}, "
                  f"within x2={factor}); per-candidate rate incl. positivity retries "
                  f"{[round(cand[e], 5) for e in eps_sorted]}")
    assert ok


def test_criterion_5_mc_vs_analytic(report, s1):
    rng = np.random.default_rng(0)
    util = ShannonUtility(s1, "shannon-log-posterior")
    parts, ok = [], True
    for d in (-1.0, 0.0, 1.0):
        est, se = estimate_expected_utility(s1, util, [d], 100_000, rng)
        exact = m.analytic_expected_utility(s1, [d])
        good = abs(est - exact) <= 3 * se
        ok &= good
        z = abs(est - exact) / se
        parts.append(f"d={d:+.0f}: {est:.4f} vs {exact:.4f} (|diff|/SE {z:.2f})")
    report(5, ok, "; ".join(parts))
    assert ok


def test_criterion_6_annealing_law(report, s1):
    support = np.array([-1.0, 0.0, 1.0])
    shift = 20.0
    spec = UtilitySpec(positivity="shift", shift=shift)
    U = m.analytic_expected_utility(s1, support[:, None]) - m.expected_log_prior(s1) + shift
    proposal = mcmc.DesignProposal("discrete", support=support)
    parts, ok = [], True
    for J in (1, 3):
        out = mcmc.annealed_run(s1, ShannonUtility(s1), J, 1_000_000, np.random.default_rng(J),
                                proposal=proposal, spec=spec)
        freq = np.array([np.mean(out.draws[:, 0] == v) for v in support])
        target = U ** J / np.sum(U ** J)
        tv = 0.5 * np.abs(freq - target).sum()
        ok &= tv < 0.05
        parts.append(f"J={J}: freq {np.round(freq, 4).tolist()} vs "
                     f"{np.round(target, 4).tolist()} TV {tv:.4f}")
    report(6, ok, "; ".join(parts) + " (need TV < 0.05)")
    assert ok


def test_criterion_7_sampler_agreement(report, s1):
    util = ShannonUtility(s1)
    sampler = mcmc.BlockSampler.plain(s1, util)
    N = 2000
    modes = {}
    sir = particles.run_sir(sampler, N, mcmc.JSchedule.ramp(50, 30), 30, np.random.default_rng(1))
    rm = particles.run_rm(sampler, N, mcmc.JSchedule.ramp(50, 30), 30, np.random.default_rng(2))
    smc = particles.run_smc(sampler, N, particles.SMCSchedule(50, 1.0), np.random.default_rng(3))
    for name, out in (("sir", sir), ("rm", rm), ("smc", smc)):
        modes[name] = pipeline.design_modes(out.designs, s1.bounds, out.weights)[0][0]
    chain = mcmc.annealed_run(s1, util, 50, 100_000, np.random.default_rng(4))
    modes["annealed"] = pipeline.design_modes(chain.draws, s1.bounds)[0][0]
    vals = np.array(list(modes.values()))
    ok = np.ptp(vals) <= 0.1 and bool(np.all(np.abs(vals - 1.0) <= 0.1))
    report(7, ok, f"modes {({k: round(v, 3) for k, v in modes.items()})}; spread "
                  f"{np.ptp(vals):.3f} (need <= 0.1, all within 0.1 of 1.0)")
    assert ok


def test_criterion_8_unit_properties(report, tmp_path):
    rng = np.random.default_rng(0)
    checks = {}
    checks["ess_equal"] = particles.ess(np.full(123, 1 / 123)) == pytest.approx(123)
    pm = np.zeros(50)
    pm[7] = 1.0
    checks["ess_point_mass"] = particles.ess(pm) == 1.0

    e = rng.normal(size=200_000)
    x = np.empty_like(e)
    x[0] = e[0]
    for t in range(1, e.size):
        x[t] = 0.5 * x[t - 1] + e[t]
    iat = diagnostics.iat_geyer(x)
    checks["iat_ar1"] = abs(iat - 3.0) <= 0.3

    k = abc.ABCKernel("uniform", 1.0)
    boundary = k.evaluate(np.zeros(1), np.array([[1.0], [-1.0], [0.999]])).tolist() == [0, 0, 1]
    sym = all(abc.ABCKernel(f, 0.7).evaluate(np.array([0.2]), np.array([[0.9]]))[0]
              == pytest.approx(abc.ABCKernel(f, 0.7).evaluate(np.array([0.9]),
                                                              np.array([[0.2]]))[0])
              for f in abc.FAMILIES)
    checks["kernel_boundary_symmetry"] = boundary and sym

    s1 = m.s1_quadratic()
    worst = 0.0
    for _ in range(50):
        d = rng.uniform(-1, 1, size=2)
        post = m.analytic_updated_posterior(s1, None, rng.normal(size=2) * 10, d)
        F = m.design_matrix(d)
        ref = (F.T @ F + s1.L + s1.R) / s1.sigma2
        worst = max(worst, float(np.max(np.abs(post.precision - ref) / np.abs(ref).max())))
    checks["precision_additivity"] = worst <= 1e-8

    w = np.array([0.05, 0.15, 0.3, 0.5])
    counts = np.zeros(4)
    for _ in range(20_000):
        counts += np.bincount(particles.multinomial_indices(w, rng), minlength=4)
    checks["multinomial_unbiased"] = bool(np.all(np.abs(counts / 80_000 - w) < 0.005))

    args = ["--scenario", "s1-quadratic", "--algo", "annealed", "--J", "10", "--iterations",
            "5000", "--seed", "3", "--quiet"]
    outs = []
    for tag in ("a", "b"):
        assert cli.main(args + ["--out", str(tmp_path / tag)]) == 0
        outs.append((tmp_path / tag / "draws.csv").read_bytes())
    checks["replay_determinism"] = outs[0] == outs[1]

    ok = all(checks.values())
    report(8, ok, f"{checks}; IAT AR(1) 0.5 = {iat:.3f}; precision rel. error {worst:.1e}")
    assert ok


def test_criterion_9_two_stage_rate_trend(report, s1):
    rates, iats, sds = {}, {}, {}
    for J in (50, 100, 200):
        rec = pipeline.two_stage_design(s1, pipeline.PMCConfig(5000),
                                        pipeline.ChainConfig(J=J, iterations=100_000), seed=0)
        rates[J] = rec.diagnostics["acceptance_rate"]
        iats[J] = rec.diagnostics["iat"][0]
        sds[J] = float(np.std(rec.draws[:, 0]))
    decreasing = rates[50] > rates[100] > rates[200]
    factor = all(within_factor(rates[J], TABLE2[J], 2.0) for J in TABLE2)
    ok = decreasing and factor
    report(9, ok, f"acceptance {({J: round(r, 4) for J, r in rates.items()})} vs table "
                  f"{TABLE2} (strictly decreasing={decreasing}, within x2={factor}); "
                  f"IAT {({J: round(v, 1) for J, v in iats.items()})} vs {TABLE2_IAT} "
                  f"(order of magnitude only); "
                  f"draw SD {({J: round(v, 3) for J, v in sds.items()})}")
    assert ok
