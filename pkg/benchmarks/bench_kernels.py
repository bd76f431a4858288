"""Time the numba kernels against their pure-numpy fallbacks.

Runs both implementations directly (no env flag needed) and prints one line
per kernel and dtype. Usage:

    python benchmarks/bench_kernels.py [--n 200000] [--dim 64] [--repeat 5]
"""

import argparse
import time

import numpy as np

from tiervec import kernels


def timeit(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    rows = []
    for name, mat in [
        ("float32", rng.normal(0, 1, (args.n, args.dim)).astype(np.float32)),
        ("int8", rng.integers(-128, 128, (args.n, args.dim), dtype=np.int8)),
    ]:
        q = mat[0].astype(np.float64)
        pairs = [("l2sq_one", kernels._l2sq_one_np, None), ("ip_one", kernels._ip_one_np, None)]
        if kernels._HAS_NUMBA:
            out = np.empty(args.n)
            pairs = [
                ("l2sq_one", kernels._l2sq_one_np,
                 lambda m, v: kernels._l2sq_one_nb(m, v, out)),
                ("ip_one", kernels._ip_one_np,
                 lambda m, v: kernels._ip_one_nb(m, v, out)),
            ]
        for kname, np_fn, nb_fn in pairs:
            t_np = timeit(np_fn, mat, q, repeat=args.repeat)
            if nb_fn is not None:
                nb_fn(mat, q)  # compile outside the timed region
                t_nb = timeit(nb_fn, mat, q, repeat=args.repeat)
                rows.append((kname, name, t_np, t_nb))
            else:
                rows.append((kname, name, t_np, None))

        kk = 64
        d32 = rng.normal(0, 1, (256, args.n)).astype(np.float32)
        t_np = timeit(kernels._topk_select_np, d32, kk, repeat=args.repeat)
        if kernels._HAS_NUMBA:
            sel = np.empty((256, kk), dtype=np.int64)
            kernels._topk_select_nb(d32, kk, sel)
            t_nb = timeit(lambda d, k: kernels._topk_select_nb(d, k, sel), d32, kk,
                          repeat=args.repeat)
            rows.append(("topk_select", name, t_np, t_nb))
        else:
            rows.append(("topk_select", name, t_np, None))

    print(f"backend in use: {kernels.BACKEND}  (n={args.n}, dim={args.dim})")
    print(f"{'kernel':<14} {'dtype':<8} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for kname, dtype, t_np, t_nb in rows:
        if t_nb is None:
            print(f"{kname:<14} {dtype:<8} {t_np*1e3:>8.2f}ms {'-':>10} {'-':>8}")
        else:
            print(f"{kname:<14} {dtype:<8} {t_np*1e3:>8.2f}ms {t_nb*1e3:>8.2f}ms "
                  f"{t_np/t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
