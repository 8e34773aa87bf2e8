"""Timing of the compiled and numpy mixing kernels.

Usage: ``python3 benchmarks/bench_kernels.py [--repeat 5] [--threads 1]``

Shapes follow the experiments: a 784-10 output block, a 784-120 hidden
block and a 100-128 regression block, each on a batch of 1000 samples.
"""
import argparse
import time

import numpy as np

from epsnn import _kernels, _kernels_py
from epsnn.mixing import SignalMoments, row_sums

try:
    from epsnn import _mixing_ext
except ImportError:
    _mixing_ext = None

SHAPES = {"784-10": (1000, 10, 785), "784-120": (1000, 120, 785), "100-128": (600, 128, 100)}


def block(n, i, j, seed=0):
    rng = np.random.default_rng(seed)
    mv = (rng.random((n, j)) < 0.2) * rng.uniform(0, 1, (n, j))
    sig = SignalMoments(mv, mv)
    mw = rng.normal(0, 0.3, (i, j))
    vw = rng.uniform(0.01, 1, (i, j))
    mu = rng.normal(0, 2, (n, i))
    lam = rng.uniform(0.1, 3, (n, i))
    s_m, s_v = row_sums(sig, mw, vw)
    return (mv, mv, sig.var, mw, vw, mu, lam, s_m, s_v)


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args, 1e-3, True)
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    a = p.parse_args(argv)
    _kernels.set_threads(a.threads)
    print(f"dispatch backend: {_kernels.BACKEND}, threads: {a.threads}")
    print(f"{'block':>8} {'numpy [ms]':>11} {'cython [ms]':>12} {'speed-up':>9}")
    for name, shape in SHAPES.items():
        args = block(*shape)
        t_py = best_of(_kernels_py.mixing_backward, args, a.repeat)
        if _mixing_ext is None:
            print(f"{name:>8} {1e3 * t_py:11.2f} {'n/a':>12} {'n/a':>9}")
            continue
        t_cy = best_of(lambda *x: _kernels.mixing_backward(*x, impl=_mixing_ext.mixing_backward),
                       args, a.repeat)
        print(f"{name:>8} {1e3 * t_py:11.2f} {1e3 * t_cy:12.2f} {t_py / t_cy:8.1f}x")


if __name__ == "__main__":
    main()
