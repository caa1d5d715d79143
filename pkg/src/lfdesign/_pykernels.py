"""Pure-Python (numpy) implementations of the hot kernels.

These mirror ``_ckernels.pyx`` one for one and are used when the compiled
extension is unavailable or ``LFDESIGN_PURE_PYTHON`` is set.
"""

import numpy as np

_CHUNK = 512


def mh_scan(log_w_prop, log_unif, log_w_current):
    """Sequential Metropolis-Hastings accept/reject over pre-drawn proposals.

    Returns ``(index, n_accepted, log_w_final)`` where ``index[t]`` is the
    position of the proposal holding the chain after iteration ``t`` (-1 while
    the incoming state is still current).
    """
    log_w_prop = np.asarray(log_w_prop, dtype=np.float64)
    log_unif = np.asarray(log_unif, dtype=np.float64)
    index = np.empty(log_w_prop.shape[0], dtype=np.int64)
    cur = float(log_w_current)
    pos = -1
    n_acc = 0
    for t in range(log_w_prop.shape[0]):
        p = log_w_prop[t]
        if p == p and p != -np.inf:
            if cur == -np.inf or log_unif[t] < p - cur:
                cur = p
                pos = t
                n_acc += 1
        index[t] = pos
    return index, n_acc, cur


def gauss_mixture_logsumexp(points, centers, log_weights):
    """``log sum_j exp(log_weights[j] - |points[i] - centers[j]|^2 / 2)`` per row."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    log_weights = np.asarray(log_weights, dtype=np.float64)
    out = np.empty(points.shape[0])
    c2 = 0.5 * np.einsum("ij,ij->i", centers, centers)
    base = log_weights - c2
    for start in range(0, points.shape[0], _CHUNK):
        p = points[start:start + _CHUNK]
        p2 = 0.5 * np.einsum("ij,ij->i", p, p)
        a = p @ centers.T + base[None, :] - p2[:, None]
        amax = a.max(axis=1)
        finite = np.isfinite(amax)
        amax = np.where(finite, amax, 0.0)
        out[start:start + _CHUNK] = amax + np.log(np.exp(a - amax[:, None]).sum(axis=1))
        out[start:start + _CHUNK][~finite] = -np.inf
    return out


def uniform_hits(y, x, eps):
    """1 where ``|x_i - y| / sqrt(s) < eps`` else 0, for rows of ``x`` (B, s)."""
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    s = y.shape[0]
    d2 = np.zeros(x.shape[0])
    for j in range(s):
        diff = x[:, j] - y[j]
        d2 += diff * diff
    return (d2 < eps * eps * s).astype(np.uint8)


def geyer_ims(rho):
    """Initial monotone sequence estimate ``-1 + 2 sum_m Gamma_m``."""
    rho = np.asarray(rho, dtype=np.float64)
    npairs = rho.shape[0] // 2
    if npairs == 0:
        return 1.0
    gamma = rho[0:2 * npairs:2] + rho[1:2 * npairs:2]
    nonpos = np.flatnonzero(gamma <= 0.0)
    if nonpos.size:
        gamma = gamma[:nonpos[0]]
    if gamma.size == 0:
        return 1.0
    gamma = np.minimum.accumulate(gamma)
    total = 0.0
    for g in gamma:
        total += g
    return -1.0 + 2.0 * total


def updated_quad(rows, z, theta, c0, G, A):
    """``(theta - m)^T A (theta - m)`` per row, with ``m = c0[r] + G[r] z``."""
    rows = np.asarray(rows, dtype=np.int64)
    m = c0[rows] + np.einsum("bkn,bn->bk", G[rows], z)
    r = np.asarray(theta, dtype=np.float64) - m
    return np.einsum("bi,bij,bj->b", r, A[rows], r)
