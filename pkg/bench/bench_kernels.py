#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Usage: python bench/bench_kernels.py [--repeat N]

Covers the three hot paths: image-source accumulation, batched
normal-system construction (257 bins), and batched filter application.
The active default backend is whatever NCDEREV_BACKEND selects; this
script times both explicitly.
"""

import argparse
import time

import numpy as np

from ncderev import kernels


def timeit(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    dims = np.array([7.95, 5.68, 4.5])
    src = np.array([2.0, 2.0, 1.5])
    mic = np.array([3.5, 2.8, 1.5])
    n_taps = int(1.2 * 0.6 * 16000)

    frames, bins, p, q = 140, 257, 10, 10
    taps = p + q + 1
    x = rng.normal(size=(frames + 20, bins)) + 1j * rng.normal(size=(frames + 20, bins))
    y = rng.normal(size=(frames, bins)) + 1j * rng.normal(size=(frames, bins))
    g = rng.normal(size=(bins, taps)) + 1j * rng.normal(size=(bins, taps))

    cases = {
        "rir_accumulate (0.6 s RIR)": lambda: kernels.rir_accumulate(
            n_taps, dims, src, mic, 0.75, 16000),
        f"normal_blocks ({bins} bins, {taps} taps)": lambda: kernels.normal_blocks(
            x, y, q, taps),
        f"apply_fir ({bins} bins, {taps} taps)": lambda: kernels.apply_fir(
            g, x, q, frames),
    }

    results = {}
    backends = [b for b in ("numba", "numpy") if b != "numba" or kernels.HAVE_NUMBA]
    for backend in backends:
        kernels.set_backend(backend)
        for name, fn in cases.items():
            fn()  # warmup (JIT compile on the numba path)
            results[(backend, name)] = timeit(fn, args.repeat)

    width = max(len(n) for n in cases)
    header = f"{'kernel':<{width}}  {'numba (s)':>10}  {'numpy (s)':>10}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name in cases:
        t_numba = results.get(("numba", name))
        t_numpy = results.get(("numpy", name))
        if t_numba is None:
            print(f"{name:<{width}}  {'n/a':>10}  {t_numpy:>10.4f}  {'n/a':>8}")
        else:
            print(f"{name:<{width}}  {t_numba:>10.4f}  {t_numpy:>10.4f}"
                  f"  {t_numpy / t_numba:>7.1f}x")


if __name__ == "__main__":
    main()
