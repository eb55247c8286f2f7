"""Time the jit twins against their numpy fallbacks on realistic sizes.

Run:  python3 benchmarks/bench_accel.py
"""

import time

import numpy as np

from salience import accel


def best_of(fn, *args, reps=7):
    """Best wall time over reps, in milliseconds; fn must not mutate args."""
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def bench_corr_rows():
    rng = np.random.default_rng(0)
    padded = rng.normal(0, 1, (200, 212))
    taps = rng.normal(0, 1, 13)
    return (best_of(accel._corr_rows_jit, padded, taps),
            best_of(accel._corr_rows_np, padded, taps))


def bench_smo_core():
    rng = np.random.default_rng(1)
    n = 600
    a = rng.normal(0, 1, (n, n // 2))
    k = a @ a.T / n + np.eye(n)
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    lo = np.where(y > 0, 0.0, -1.0)
    hi = np.where(y > 0, 1.0, 0.0)

    def run(core):
        beta, g = np.zeros(n), y.copy()
        core(k, beta, g, lo, hi, 1e-4, 100000)

    return (best_of(run, accel._smo_core_jit),
            best_of(run, accel._smo_core_np))


def bench_stump_scan():
    rng = np.random.default_rng(2)
    nf, n, nc = 36, 2000, 256
    w = rng.random((nf, n)) + 0.01
    w /= w.sum()
    z = np.where(rng.random((nf, n)) < 0.5, 1.0, -1.0)
    split = np.sort(rng.integers(0, n + 1, (nf, nc)), axis=1).astype(np.int64)
    return (best_of(accel._stump_scan_jit, w, w * z, split),
            best_of(accel._stump_scan_np, w, w * z, split))


def main():
    if accel.JIT_ENABLED:
        accel.warmup()
        # compile the remaining twins outside the timed region
        bench_corr_rows()
        bench_smo_core()
        bench_stump_scan()
    else:
        print("note: numba path disabled, jit column runs the fallback\n")
    rows = [("corr_rows 200x212 k=13", *bench_corr_rows()),
            ("smo_core n=600", *bench_smo_core()),
            ("stump_scan 36x2000x256", *bench_stump_scan())]
    print(f"{'kernel':<26} {'jit ms':>9} {'numpy ms':>9} {'speedup':>8}")
    for name, jit_ms, np_ms in rows:
        print(f"{name:<26} {jit_ms:>9.3f} {np_ms:>9.3f} {np_ms / jit_ms:>7.2f}x")


if __name__ == "__main__":
    main()
