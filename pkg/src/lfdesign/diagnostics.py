"""Chain and particle diagnostics.

Integrated autocorrelation time (Geyer's initial monotone sequence), kernel
density mode detection for design marginals, square-binned frequencies for
two-dimensional bubble plots, and thinning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft, signal

from . import kernels

MIN_IAT_LENGTH = 100
MIN_KDE_DRAWS = 100


def thin(series, k):
    """Elements at indices ``0, k, 2k, ...``."""
    if k < 1:
        raise ValueError("thinning factor must be >= 1")
    return np.asarray(series)[::k]


def acceptance_rate(n_accepted, n_proposed):
    return n_accepted / n_proposed if n_proposed else 0.0


def autocorrelation(series):
    """Normalized sample autocorrelation at all lags, computed by FFT."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = x.size
    size = fft.next_fast_len(2 * n)
    f = fft.rfft(x, size)
    acov = fft.irfft(f * np.conj(f), size)[:n] / n
    if not acov[0] > 0:
        raise ValueError("zero variance: autocorrelation undefined for a constant series")
    return acov / acov[0]


def iat_geyer(series):
    """Integrated autocorrelation time ``1 + 2 sum rho_i``.

    Uses Geyer's initial monotone positive sequence estimator: paired sums
    ``rho_2m + rho_2m+1`` are truncated at the first non-positive pair and
    made nonincreasing before summing.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < MIN_IAT_LENGTH:
        raise ValueError(f"IAT needs a 1-D series of length >= {MIN_IAT_LENGTH}")
    if np.all(x == x[0]):
        raise ValueError("zero variance: IAT undefined for a constant series")
    return float(kernels.geyer_ims(autocorrelation(x)))


# ---------------------------------------------------------------------------
# kernel density modes


@dataclass(frozen=True)
class KDEConfig:
    """Settings for :func:`kde_mode`.

    ``bandwidth`` is ``"silverman"`` (``1.06 sd n^-1/5``) or a positive number.
    Mass beyond ``lower``/``upper`` is reflected back so that modes on the
    boundary of the design box are not pulled inward.
    """

    bandwidth: str | float = "silverman"
    grid_points: int = 512
    lower: float | None = -1.0
    upper: float | None = 1.0
    reflect: bool = True

    def __post_init__(self):
        if self.grid_points < 16:
            raise ValueError("grid_points must be >= 16")
        if not isinstance(self.bandwidth, str) and not self.bandwidth > 0:
            raise ValueError("fixed bandwidth must be > 0")
        if isinstance(self.bandwidth, str) and self.bandwidth != "silverman":
            raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")


@dataclass
class KDEResult:
    mode: float
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def __iter__(self):  # allows ``mode, curve = kde_mode(...)``
        yield self.mode
        yield (self.grid, self.density)


def _weighted_sd(x, w):
    mu = w @ x
    return math.sqrt(max(0.0, float(w @ (x - mu) ** 2)))


def kde_mode(draws, config=None, weights=None):
    """Gaussian KDE on a regular grid and its argmax.

    Draws are linearly binned onto the grid and convolved with the kernel;
    ties go to the smallest abscissa.
    """
    cfg = config or KDEConfig()
    x = np.asarray(draws, dtype=float).ravel()
    if x.size < MIN_KDE_DRAWS:
        raise ValueError(f"too few draws for a KDE (need >= {MIN_KDE_DRAWS}, got {x.size})")
    w = np.full(x.size, 1.0 / x.size) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != x.shape or np.any(w < 0) or not w.sum() > 0:
        raise ValueError("weights must be non-negative, one per draw")
    w = w / w.sum()
    n_eff = 1.0 / float(np.sum(w * w))

    lo = cfg.lower if cfg.lower is not None else float(x.min())
    hi = cfg.upper if cfg.upper is not None else float(x.max())
    if x.min() < lo or x.max() > hi:
        raise ValueError("draws fall outside the KDE support")
    G = cfg.grid_points
    grid = np.linspace(lo, hi, G)
    if np.all(x == x[0]):
        density = np.zeros(G)
        density[int(np.argmin(np.abs(grid - x[0])))] = 1.0 / (grid[1] - grid[0])
        return KDEResult(float(x[0]), grid, density, 0.0)

    if isinstance(cfg.bandwidth, str):
        h = 1.06 * _weighted_sd(x, w) * n_eff ** (-0.2)
    else:
        h = float(cfg.bandwidth)
    if not h > 0:
        h = (hi - lo) / G
    step = grid[1] - grid[0]

    # linear binning onto the grid
    pos = (x - lo) / step
    left = np.clip(np.floor(pos).astype(np.int64), 0, G - 2)
    frac = pos - left
    counts = np.bincount(left, w * (1.0 - frac), minlength=G)
    counts += np.bincount(left + 1, w * frac, minlength=G)

    # extended array: reflections about lo (index -j) and hi (index 2(G-1) - j)
    ext = np.zeros(3 * G - 2)
    off = G - 1
    ext[off:off + G] += counts
    if cfg.reflect and cfg.lower is not None:
        ext[off - np.arange(G)] += counts
    if cfg.reflect and cfg.upper is not None:
        ext[off + 2 * (G - 1) - np.arange(G)] += counts
    L = int(min(math.ceil(5.0 * h / step), 3 * G - 3))
    offsets = np.arange(-L, L + 1) * step
    kern = np.exp(-0.5 * (offsets / h) ** 2) / (h * math.sqrt(2.0 * math.pi))
    density = signal.fftconvolve(ext, kern, mode="full")[off + L:off + L + G]
    density = np.maximum(density, 0.0)
    i = int(np.argmax(density))
    return KDEResult(float(grid[i]), grid, density, h)


# ---------------------------------------------------------------------------
# two-dimensional summaries


def freq2d(draws, cell):
    """Square-binned frequencies relative to the fullest cell.

    Cells are centred on integer multiples of ``cell``.  Returns a list of
    ``((cx, cy), relfreq)`` in lexicographic order of the centres.
    """
    d = np.asarray(draws, dtype=float)
    if d.ndim != 2 or d.shape[1] != 2:
        raise ValueError("freq2d needs an (S, 2) array of designs")
    if not cell > 0:
        raise ValueError("cell size must be > 0")
    keys = np.round(d / cell).astype(np.int64)
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    rel = counts / counts.max()
    return [((round(float(k[0] * cell), 12), round(float(k[1] * cell), 12)), float(f))
            for k, f in zip(uniq, rel)]


def freq2d_modes(cells, cell, threshold=0.5):
    """Local maxima (8-neighbourhood) of ``freq2d`` output at or above ``threshold``."""
    lookup = {(round(cx / cell), round(cy / cell)): f for (cx, cy), f in cells}
    out = []
    for (cx, cy), f in cells:
        if f < threshold:
            continue
        i, j = round(cx / cell), round(cy / cell)
        neigh = [lookup.get((i + a, j + b), 0.0) for a in (-1, 0, 1) for b in (-1, 0, 1)
                 if (a, b) != (0, 0)]
        if all(f >= v for v in neigh):
            out.append(((float(cx), float(cy)), float(f)))
    return out


def mass_near(draws, targets, tol):
    """Fraction of draws within L-infinity distance ``tol`` of any target point."""
    d = np.atleast_2d(np.asarray(draws, dtype=float))
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    dist = np.abs(d[:, None, :] - t[None, :, :]).max(axis=2).min(axis=1)
    return float(np.mean(dist <= tol))
