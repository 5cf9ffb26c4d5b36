"""Timing of the two hot loops with and without numba.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Each loop is run once to trigger compilation, then timed; both backends must
return identical results.
"""

import argparse
import time

import numpy as np

from padic_heat import _accel
from padic_heat.qform import QFormPair, Side


def best_of(fn, repeat):
    fn()  # warm-up / compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--paths", type=int, default=200_000)
    args = ap.parse_args()

    form = QFormPair(3)
    coefs = np.array(form.coefficients(Side.FSTAR), dtype=np.int64)
    cases = []
    for L in (2, 3):
        shift = np.array([1, 2, 0, 5], dtype=np.int64)
        cases.append((f"level_character_sums p=3 L={L} ({3 ** (4 * L)} cosets)",
                      lambda L=L, s=shift: _accel.level_character_sums_numba(coefs, s, 3, L),
                      lambda L=L, s=shift: _accel.level_character_sums_numpy(coefs, s, 3, L)))
    paths = np.arange(args.paths, dtype=np.uint64)
    levels = (paths % 2).astype(np.int64)
    fc = np.array(form.coefficients(Side.F), dtype=np.int64)
    cases.append((f"sample_level_digits {args.paths} draws",
                  lambda: _accel.sample_level_digits_numba(7, paths, 0, levels, fc, 3, 12, 400),
                  lambda: _accel.sample_level_digits_numpy(7, paths, 0, levels, fc, 3, 12, 400)))

    print(f"{'kernel':<52} {'numba [s]':>10} {'numpy [s]':>10} {'speed-up':>9}")
    for name, fast, slow in cases:
        tf, a = best_of(fast, args.repeat)
        ts, b = best_of(slow, args.repeat)
        for x, y in zip(a, b):
            if isinstance(x, np.ndarray):
                assert np.allclose(x, y, rtol=1e-12, atol=1e-9), name
        print(f"{name:<52} {tf:10.4f} {ts:10.4f} {ts / tf:9.1f}")


if __name__ == "__main__":
    main()
