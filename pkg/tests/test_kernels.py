"""Compiled and numpy kernels must agree."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfdesign import _pykernels, kernels

BACKENDS = kernels.available_backends()
needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="extension not built")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@needs_cython
@settings(max_examples=60, deadline=None)
@given(st.integers(1, 300), st.integers(0, 2**31 - 1), st.booleans())
def test_mh_scan_equivalent(T, seed, with_bad):
    r = np.random.default_rng(seed)
    lw = r.normal(size=T)
    if with_bad:
        lw[r.random(T) < 0.2] = -np.inf
        lw[r.random(T) < 0.05] = np.nan
    lu = np.log(r.random(T))
    cur = float(r.choice([-np.inf, 0.0, 1.5]))
    a = _pykernels.mh_scan(lw, lu, cur)
    b = BACKENDS["cython"].mh_scan(lw, lu, cur)
    np.testing.assert_array_equal(a[0], b[0])
    assert a[1] == b[1] and a[2] == b[2]


@needs_cython
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 50), st.integers(1, 40), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_gauss_mixture_equivalent(P, C, k, seed):
    r = np.random.default_rng(seed)
    pts, ctr = r.normal(size=(P, k)) * 3, r.normal(size=(C, k))
    lw = np.log(r.dirichlet(np.ones(C)))
    np.testing.assert_allclose(_pykernels.gauss_mixture_logsumexp(pts, ctr, lw),
                               BACKENDS["cython"].gauss_mixture_logsumexp(pts, ctr, lw),
                               rtol=1e-9, atol=1e-9)


@needs_cython
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 200), st.integers(1, 3), st.floats(0.01, 5.0), st.integers(0, 2**31 - 1))
def test_uniform_hits_equivalent(N, s, eps, seed):
    r = np.random.default_rng(seed)
    y, x = r.normal(size=s), r.normal(size=(N, s))
    np.testing.assert_array_equal(_pykernels.uniform_hits(y, x, eps),
                                  BACKENDS["cython"].uniform_hits(y, x, eps))


@needs_cython
@settings(max_examples=40, deadline=None)
@given(st.integers(4, 400), st.floats(-0.9, 0.95), st.integers(0, 2**31 - 1))
def test_geyer_equivalent(n, phi, seed):
    r = np.random.default_rng(seed)
    x = np.empty(n)
    x[0] = r.normal()
    for t in range(1, n):
        x[t] = phi * x[t - 1] + r.normal()
    x -= x.mean()
    ac = np.correlate(x, x, "full")[n - 1:]
    ac = ac / ac[0]
    assert _pykernels.geyer_ims(ac) == pytest.approx(BACKENDS["cython"].geyer_ims(ac), rel=1e-12)


@needs_cython
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_updated_quad_equivalent(N, n, k, seed):
    r = np.random.default_rng(seed)
    B = 3
    rows = r.integers(0, B, N)
    z, theta = r.normal(size=(N, n)), r.normal(size=(N, k))
    c0, G = r.normal(size=(B, k)), r.normal(size=(B, k, n))
    L = r.normal(size=(B, k, k))
    A = L @ np.swapaxes(L, 1, 2) + np.eye(k)
    a = _pykernels.updated_quad(rows, z, theta, c0, G, A)
    np.testing.assert_allclose(a, BACKENDS["cython"].updated_quad(rows, z, theta, c0, G, A),
                               rtol=1e-10)
    m = c0[rows] + np.einsum("bkn,bn->bk", G[rows], z)
    ref = np.einsum("bi,bij,bj->b", theta - m, A[rows], theta - m)
    np.testing.assert_allclose(a, ref, rtol=1e-10)


def test_mh_scan_semantics():
    idx, n_acc, cur = _pykernels.mh_scan(np.array([0.0, -np.inf, 5.0]), np.log([0.5, 0.5, 0.5]),
                                         -np.inf)
    assert idx.tolist() == [0, 0, 2] and n_acc == 2 and cur == 5.0
