#!/usr/bin/env python3
"""Benchmark the kernel backends (NumPy/SciPy fallback vs compiled core).

Run after building the extension in place:

    python setup.py build_ext --inplace
    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from rfat import kernels
from rfat.filters import butter_lowpass

SIZES = (2_048, 8_448, 65_536)
REPEATS = 30


def timeit(fn, *args, repeats=REPEATS):
    fn(*args)  # warmup
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench_iir(backends):
    b, a = butter_lowpass(120e3, 1e6)
    b, a = np.ascontiguousarray(b), np.ascontiguousarray(a)
    print("\niir_filter (4th-order Butterworth, complex input)")
    print(f"{'n':>8} " + " ".join(f"{name:>12}" for name in backends) + "   speedup")
    for n in SIZES:
        rng = np.random.default_rng(n)
        x = np.ascontiguousarray(rng.standard_normal(n) + 1j * rng.standard_normal(n))
        times = {name: timeit(mod.iir_filter, b, a, x) for name, mod in backends.items()}
        ratio = times["numpy"] / times.get("cython", times["numpy"])
        print(
            f"{n:>8} "
            + " ".join(f"{times[name] * 1e6:>10.1f}us" for name in backends)
            + f"   {ratio:5.2f}x"
        )


def bench_features(backends):
    print("\narvtdnn_features (M=3, K=3)")
    print(f"{'n':>8} " + " ".join(f"{name:>12}" for name in backends) + "   speedup")
    for n in SIZES:
        rng = np.random.default_rng(n)
        x = np.ascontiguousarray(0.5 * (rng.standard_normal(n) + 1j * rng.standard_normal(n)))
        times = {name: timeit(mod.arvtdnn_features, x, 3, 3) for name, mod in backends.items()}
        ratio = times["numpy"] / times.get("cython", times["numpy"])
        print(
            f"{n:>8} "
            + " ".join(f"{times[name] * 1e6:>10.1f}us" for name in backends)
            + f"   {ratio:5.2f}x"
        )


def main():
    backends = kernels.available_backends()
    print(f"active backend: {kernels.backend_name()}")
    if "cython" not in backends:
        print("compiled core not built; benchmarking the fallback only")
    bench_iir(backends)
    bench_features(backends)


if __name__ == "__main__":
    main()
