# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; semantics match ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY, isnan

cnp.import_array()


def mh_scan(log_w_prop, log_unif, double log_w_current):
    cdef const double[::1] lp = np.ascontiguousarray(log_w_prop, dtype=np.float64)
    cdef const double[::1] lu = np.ascontiguousarray(log_unif, dtype=np.float64)
    cdef Py_ssize_t n = lp.shape[0], t
    index = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = index
    cdef double cur = log_w_current, p
    cdef cnp.int64_t pos = -1
    cdef Py_ssize_t n_acc = 0
    with nogil:
        for t in range(n):
            p = lp[t]
            if not isnan(p) and p != -INFINITY:
                if cur == -INFINITY or lu[t] < p - cur:
                    cur = p
                    pos = t
                    n_acc += 1
            idx[t] = pos
    return index, n_acc, cur


def gauss_mixture_logsumexp(points, centers, log_weights):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(centers, dtype=np.float64)
    cdef const double[::1] lw = np.ascontiguousarray(log_weights, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], m = c.shape[0], k = p.shape[1], i, j, a
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[::1] buf = np.empty(m, dtype=np.float64)
    cdef double d2, diff, amax, acc
    with nogil:
        for i in range(n):
            amax = -INFINITY
            for j in range(m):
                d2 = 0.0
                for a in range(k):
                    diff = p[i, a] - c[j, a]
                    d2 = d2 + diff * diff
                buf[j] = lw[j] - 0.5 * d2
                if buf[j] > amax:
                    amax = buf[j]
            if amax == -INFINITY:
                o[i] = -INFINITY
                continue
            acc = 0.0
            for j in range(m):
                acc = acc + exp(buf[j] - amax)
            o[i] = amax + log(acc)
    return out


def uniform_hits(y, x, double eps):
    cdef const double[::1] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:, ::1] xx = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xx.shape[0], s = yy.shape[0], i, j
    out = np.empty(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] o = out
    cdef double d2, diff, bound = eps * eps * s
    with nogil:
        for i in range(n):
            d2 = 0.0
            for j in range(s):
                diff = xx[i, j] - yy[j]
                d2 = d2 + diff * diff
            o[i] = 1 if d2 < bound else 0
    return out


def geyer_ims(rho):
    cdef const double[::1] r = np.ascontiguousarray(rho, dtype=np.float64)
    cdef Py_ssize_t npairs = r.shape[0] // 2, m
    cdef double g, gmin = INFINITY, total = 0.0
    cdef int any_pair = 0
    with nogil:
        for m in range(npairs):
            g = r[2 * m] + r[2 * m + 1]
            if g <= 0.0:
                break
            if g < gmin:
                gmin = g
            total = total + gmin
            any_pair = 1
    if not any_pair:
        return 1.0
    return -1.0 + 2.0 * total


def updated_quad(rows, z, theta, c0, G, A):
    cdef const cnp.int64_t[::1] rr = np.ascontiguousarray(rows, dtype=np.int64)
    cdef const double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[:, ::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:, ::1] cc = np.ascontiguousarray(c0, dtype=np.float64)
    cdef const double[:, :, ::1] gg = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[:, :, ::1] aa = np.ascontiguousarray(A, dtype=np.float64)
    cdef Py_ssize_t nrow = rr.shape[0], k = th.shape[1], n = zz.shape[1], i, a, b, j, r
    out = np.empty(nrow, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[32] res
    cdef double acc, q
    if k > 32:
        raise ValueError("parameter dimension above 32 not supported by the compiled kernel")
    with nogil:
        for i in range(nrow):
            r = rr[i]
            for a in range(k):
                acc = cc[r, a]
                for j in range(n):
                    acc = acc + gg[r, a, j] * zz[i, j]
                res[a] = th[i, a] - acc
            q = 0.0
            for a in range(k):
                acc = 0.0
                for b in range(k):
                    acc = acc + aa[r, a, b] * res[b]
                q = q + res[a] * acc
            o[i] = q
    return out
