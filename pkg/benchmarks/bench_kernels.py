"""Time the numba and numpy paths of each kernel.

    python benchmarks/bench_kernels.py [--repeats 5] [--n 64]

The first numba call of each kernel compiles (or loads the cache) and is
excluded; the table reports the best of ``--repeats`` calls.
"""
import argparse
import time

import numpy as np

from sketchsel import kernels


def cases(n, gen):
    A = gen.standard_normal((n, n))
    S = A @ A.T / n + 0.1 * np.eye(n)
    L = np.linalg.cholesky(S)
    R = gen.standard_normal((3 * n, n))
    v = gen.standard_normal(50 * n)
    X = gen.standard_normal((4096, 10_000))
    Hs = gen.standard_normal((16, 32))
    idx = np.sort(gen.choice(4096, 32, replace=False)).astype(np.int64)
    tol = 1e-12 * np.linalg.norm(S)
    return {
        "jacobi": (S, tol, 100),
        "hestenes": (R, 3 * n * np.finfo(float).eps, 100),
        "cholesky": (S, 1e-13 * np.abs(S).max()),
        "cho_solve": (L, gen.standard_normal((n, n))),
        "capped_simplex": (v, 10.0, 200),
        "gather_apply": (Hs, idx, X),
    }


def best_time(fn, args, repeats):
    out = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        out = min(out, time.perf_counter() - t0)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=64, help="matrix size for the dense kernels")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if kernels.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")
    gen = np.random.default_rng(args.seed)
    print(f"{'kernel':16s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'ratio':>8s}")
    for name, kargs in cases(args.n, gen).items():
        nb, npy = kernels.get(name, True), kernels.get(name, False)
        nb(*kargs)  # compile
        t_nb = best_time(nb, kargs, args.repeats)
        t_np = best_time(npy, kargs, args.repeats)
        print(f"{name:16s} {1e3 * t_nb:12.3f} {1e3 * t_np:12.3f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()
