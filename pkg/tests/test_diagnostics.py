import numpy as np
import pytest

from lfdesign import diagnostics as diag


def ar1(phi, n, rng):
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - phi ** 2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


def test_iat_ar1(rng):
    # theoretical (1 + phi) / (1 - phi)
    assert diag.iat_geyer(ar1(0.5, 200_000, rng)) == pytest.approx(3.0, rel=0.1)
    assert diag.iat_geyer(rng.normal(size=50_000)) == pytest.approx(1.0, rel=0.1)


def test_iat_errors():
    with pytest.raises(ValueError, match="length"):
        diag.iat_geyer(np.arange(10.0))
    with pytest.raises(ValueError, match="zero variance"):
        diag.iat_geyer(np.ones(500))


def test_thin_and_rate():
    assert diag.thin(np.arange(10), 3).tolist() == [0, 3, 6, 9]
    with pytest.raises(ValueError):
        diag.thin(np.arange(3), 0)
    assert diag.acceptance_rate(0, 0) == 0.0


def test_kde_mode_recovers_peak(rng):
    mode, (grid, dens) = diag.kde_mode(rng.normal(0.3, 0.1, 20_000))
    assert mode == pytest.approx(0.3, abs=0.02)
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=0.01)


def test_kde_boundary_mode(rng):
    x = 1.0 - np.abs(rng.normal(0, 0.1, 20_000))
    x = x[x >= -1]
    res = diag.kde_mode(x)
    assert res.mode == pytest.approx(1.0, abs=0.02)


def test_kde_weights_and_errors(rng):
    x = rng.uniform(-1, 1, 5000)
    w = np.exp(-0.5 * ((x + 0.5) / 0.1) ** 2)
    assert diag.kde_mode(x, weights=w).mode == pytest.approx(-0.5, abs=0.05)
    with pytest.raises(ValueError, match="too few"):
        diag.kde_mode(x[:10])
    with pytest.raises(ValueError, match="outside"):
        diag.kde_mode(np.full(200, 3.0))
    assert diag.kde_mode(np.full(200, 0.25)).mode == 0.25


def test_freq2d_and_modes(rng):
    pts = np.concatenate([np.tile([[0.0, 1.0]], (60, 1)), np.tile([[1.0, 0.0]], (50, 1)),
                          rng.uniform(-1, 1, size=(40, 2))])
    cells = diag.freq2d(pts, 0.1)
    top = max(cells, key=lambda c: c[1])
    assert top[0] == (0.0, 1.0) and top[1] == 1.0
    modes = diag.freq2d_modes(cells, 0.1, threshold=0.5)
    assert {c for c, _ in modes} == {(0.0, 1.0), (1.0, 0.0)}
    assert diag.mass_near(pts, [[0, 1], [1, 0]], 0.05) >= 110 / 150
