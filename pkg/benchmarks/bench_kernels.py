#!/usr/bin/env python3
"""Compare the numba and pure-numpy kernels: FFT, CSR mat-vec, conjugate gradients.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is warmed up once (numba compiles on first call), then timed as
the best of ``--repeat`` runs. Outputs of the two backends are checked to
agree before timing.
"""

import argparse
import time

import numpy as np

from wavephase import _accel
from wavephase import cohomology as co
from wavephase.numkernel import SparseSym, cg_solve, dft_seq


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    # FFT: embedding-like d x T blocks, power-of-two and Bluestein lengths
    for T in (128, 1024, 24576, 1000):
        X = rng.standard_normal((64 if T <= 1024 else 4, T))
        yield f"dft d={X.shape[0]} T={T}", lambda f, X=X: dft_seq(X, use_numba=f), 1e-8

    # Laplacian of a long overlapping-window covering
    g = co.overlap_graph(co.make_covering(20000, 32, 4))
    L = g.laplacian
    x = rng.standard_normal((L.order, 16))
    yield f"csr matvec n={L.order} nnz={L.nnz} r=16", lambda f: L.matvec(x, use_numba=f), 1e-12

    A = SparseSym(L.order, L.indptr, L.indices, 0.1 * L.data)
    b = rng.standard_normal((L.order, 4))
    yield f"cg (I + 0.1 L) n={L.order} r=4", lambda f: cg_solve(A, b, shift=1.0, use_numba=f).x, 1e-9


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"numba available: {_accel.HAS_NUMBA}; default backend: {_accel.backend()}")
    if not _accel.HAS_NUMBA:
        print("numba not installed: only the numpy path can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<40} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, run, atol in cases(rng):
        t_np = best_of(lambda: run(False), args.repeat)
        if _accel.HAS_NUMBA:
            a, b = run(False), run(True)
            scale = max(1.0, float(np.abs(a).max()))
            if np.abs(a - b).max() > atol * scale:
                raise SystemExit(f"{name}: backends disagree by {np.abs(a - b).max():.3e}")
            t_nb = best_of(lambda: run(True), args.repeat)
            print(f"{name:<40} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>7.2f}x")
        else:
            print(f"{name:<40} {t_np * 1e3:>10.2f} {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
