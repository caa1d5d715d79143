import warnings

import numpy as np
import pytest

from lfdesign import pipeline as pl


def test_oracle_report_s1_s2(s1, s2):
    r1 = pl.oracle_report(s1, 0.01)
    assert r1.modes == [[1.0]]
    assert r1.diagnostics["psi_max"] == pytest.approx(4.0, rel=1e-3)
    r2 = pl.oracle_report(s2, 0.01)
    assert sorted(map(tuple, r2.modes)) == [(0.0, 1.0), (1.0, 0.0)]
    again = pl.oracle_report(s2, 0.01)
    np.testing.assert_array_equal(again.stages["oracle"].utility, r2.stages["oracle"].utility)


def test_two_stage_small(s1):
    rec = pl.two_stage_design(s1, pl.PMCConfig(1000), pl.ChainConfig(J=20, iterations=5000),
                              seed=3)
    assert rec.complete and rec.draws.shape == (5000, 1)
    assert set(rec.wall_clock) == {"stage1", "stage2"}
    assert 0 < rec.diagnostics["acceptance_rate"] < 1
    assert len(rec.modes) == 1
    s = rec.summary()
    assert s["config"]["stage2"]["J"] == 20 and s["seed"] == 3


def test_two_stage_replay(s1):
    cfg = (pl.PMCConfig(500), pl.ChainConfig(J=5, iterations=2000))
    a = pl.two_stage_design(s1, *cfg, seed=11)
    b = pl.two_stage_design(s1, *cfg, seed=11)
    np.testing.assert_array_equal(a.draws, b.draws)


def test_two_stage_stage1_failure_gives_partial(s1):
    with pytest.raises(pl.PipelineError) as info:
        pl.two_stage_design(s1, pl.PMCConfig(200, (20.0, 1e-9), stall_cap=5000),
                            pl.ChainConfig(J=2, iterations=100), seed=0)
    rec = info.value.record
    assert not rec.complete and rec.stages["posterior"].generation == 1
    assert any("stage 1 failed" in f for f in rec.flags)
    assert "chain" not in rec.stages


def test_lf_design_warns_and_freezes(s1):
    with pytest.warns(RuntimeWarning, match="J=10"):
        rec = pl.augmented_lf_design(s1, pl.LFConfig(J=10, M=1, epsilon=s1.sigma,
                                                     iterations=5000), seed=0)
    assert rec.diagnostics["acceptance_rate"] < 1e-3
    assert rec.warnings


def test_lf_design_no_warning_small_J(s1):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rec = pl.augmented_lf_design(s1, pl.LFConfig(J=1, M=1, epsilon=22.56, iterations=3000),
                                     seed=0)
    assert rec.diagnostics["acceptance_rate"] > 0


def test_strict_mode_runs(s1):
    rec = pl.two_stage_design(s1, pl.PMCConfig(500), pl.ChainConfig(J=3, iterations=2000,
                                                                     strict=True), seed=1)
    assert rec.draws.shape == (2000, 1)
