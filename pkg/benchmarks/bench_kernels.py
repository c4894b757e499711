"""Compare the compiled kernels with the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py``; prints one line per kernel
with the best-of-five time for each backend and the speed-up.
"""
import argparse
import math
import timeit

import numpy as np

from sparse_eoc import _kernels_py

try:
    from sparse_eoc import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

CRELU, CST = 2, 3


def cases(n_grid, n_iter, shape):
    qs = np.geomspace(1e-4, 100.0, n_grid)
    h = np.random.default_rng(0).standard_normal(shape)
    return {
        "vmap (scalar x1000)": lambda k: [k.vmap(CRELU, 0.52, 1.05, 4.12, 0.47, 1.0) for _ in range(1000)],
        "vmap_d2 (scalar x1000)": lambda k: [k.vmap_d2(CST, 1.44, 1.53, 6.8, 1.0) for _ in range(1000)],
        f"vmap_grid (n={n_grid})": lambda k: k.vmap_grid(CST, 1.44, 1.53, 6.8, 0.66, qs),
        f"iterate_vmap (n={n_iter})": lambda k: k.iterate_vmap(CRELU, 0.52, 1.05, 4.12, 0.47, 1.05, n_iter, 1e12),
        f"act_forward {shape}": lambda k: k.act_forward(CST, 1.04, 1.17, h),
        f"act_forward relu {shape}": lambda k: k.act_forward(0, 0.52, math.inf, h),
    }


def best_of(fn, repeat=5):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=20000)
    ap.add_argument("--iters", type=int, default=20000)
    ap.add_argument("--rows", type=int, default=256)
    ap.add_argument("--cols", type=int, default=2000)
    args = ap.parse_args(argv)
    if _kernels_c is None:
        print("compiled extension not available; only the Python backend can run")
    print(f"{'kernel':34s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speed-up':>9s}")
    for name, fn in cases(args.grid, args.iters, (args.rows, args.cols)).items():
        t_py = best_of(lambda: fn(_kernels_py))
        if _kernels_c is None:
            print(f"{name:34s} {t_py * 1e3:12.3f} {'-':>12s} {'-':>9s}")
            continue
        t_c = best_of(lambda: fn(_kernels_c))
        print(f"{name:34s} {t_py * 1e3:12.3f} {t_c * 1e3:12.3f} {t_py / t_c:9.1f}")


if __name__ == "__main__":
    main()
