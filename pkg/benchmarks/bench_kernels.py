"""Compiled versus numpy kernels, plus one end-to-end chain per backend.

Run with ``python benchmarks/bench_kernels.py``.  Timings are best-of-``REPEAT``
wall clock in milliseconds.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from lfdesign import kernels

REPEAT = 5


def best_of(fn, repeat=REPEAT):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def cases(rng):
    T = 200_000
    lw, lu = rng.normal(size=T), np.log(rng.random(T))
    pts, ctr = rng.normal(size=(2000, 3)), rng.normal(size=(2000, 3))
    lwm = np.log(np.full(2000, 1 / 2000))
    y, x = rng.normal(size=1), rng.normal(size=(1_000_000, 1))
    rho = 0.9 ** np.arange(100_000)
    B, N = 1000, 100_000
    rows = rng.integers(0, B, N)
    z, th = rng.normal(size=(N, 1)), rng.normal(size=(N, 3))
    c0, G = rng.normal(size=(B, 3)), rng.normal(size=(B, 3, 1))
    A = np.broadcast_to(np.eye(3), (B, 3, 3)).copy()
    return {
        "mh_scan (T=2e5)": lambda k: k.mh_scan(lw, lu, 0.0),
        "gauss_mixture_logsumexp (2000x2000, k=3)":
            lambda k: k.gauss_mixture_logsumexp(pts, ctr, lwm),
        "uniform_hits (1e6 x 1)": lambda k: k.uniform_hits(y, x, 1.0),
        "geyer_ims (1e5 lags)": lambda k: k.geyer_ims(rho),
        "updated_quad (1e5 rows, k=3)": lambda k: k.updated_quad(rows, z, th, c0, G, A),
    }


def chain_seconds(pure):
    env = dict(os.environ, LFDESIGN_PURE_PYTHON="1" if pure else "0")
    code = ("import time, numpy as np; from lfdesign import model, mcmc, utility;"
            "s = model.s1_quadratic(); u = utility.ShannonUtility(s);"
            "t = time.perf_counter();"
            "mcmc.annealed_run(s, u, 100, 20000, np.random.default_rng(0));"
            "print(time.perf_counter() - t)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--no-chain", action="store_true", help="skip the end-to-end chain")
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':44s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        tp = best_of(lambda: fn(backends["python"]))
        if "cython" in backends:
            tc = best_of(lambda: fn(backends["cython"]))
            print(f"{name:44s} {tp:10.2f} {tc:10.2f} {tp / tc:8.1f}")
        else:
            print(f"{name:44s} {tp:10.2f} {'-':>10s} {'-':>8s}")
    if not args.no_chain:
        tp = chain_seconds(True)
        tc = chain_seconds(False)
        print(f"\nannealed chain J=100, 2e4 iterations: python {tp:.2f} s, "
              f"cython {tc:.2f} s ({tp / tc:.1f}x)")


if __name__ == "__main__":
    main()
