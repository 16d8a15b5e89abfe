#!/usr/bin/env python3
"""Benchmark the JIT kernels against the pure-NumPy fallback.

The backend is fixed per process at import time (VDA_NUMBA), so this script
re-runs each workload in a child process per backend and prints a table:

    python3 benchmarks/bench_kernels.py
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

WORKLOADS = ("levinson", "mark_periods", "local_peaks")
REPEATS = 7


def _setup(workload):
    from vda import dsp

    rng = np.random.default_rng(0)
    if workload == "levinson":
        frames = rng.standard_normal((4000, 400))
        r = dsp.autocorrelate(frames, 12)
        return (r,)
    if workload == "mark_periods":
        n = 20 * 16000
        period = 160
        x = rng.normal(0.0, 0.01, n)
        x[80::period] += 1.0
        return (x, 80, float(period))
    if workload == "local_peaks":
        return (rng.standard_normal((5000, 36)),)
    raise SystemExit(f"unknown workload {workload}")


def _run(workload, args):
    from vda import kernels

    if workload == "levinson":
        return lambda: kernels.levinson_batch(args[0])
    if workload == "mark_periods":
        return lambda: kernels.mark_periods(args[0], args[1], args[2])
    return lambda: kernels.local_peak_values(args[0])


def worker(workload):
    from vda import kernels

    args = _setup(workload)
    fn = _run(workload, args)
    fn()  # warm-up (JIT compile on the numba path)
    best = min(_time_once(fn) for _ in range(REPEATS))
    print(json.dumps({"backend": kernels.backend_name(), "seconds": best}))


def _time_once(fn):
    start = time.perf_counter()
    fn()
    return time.perf_counter() - start


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--worker", choices=WORKLOADS)
    opts = parser.parse_args()
    if opts.worker:
        worker(opts.worker)
        return

    results = {}
    for workload in WORKLOADS:
        results[workload] = {}
        for flag, label in (("1", "numba"), ("0", "numpy")):
            env = dict(os.environ, VDA_NUMBA=flag)
            out = subprocess.run(
                [sys.executable, __file__, "--worker", workload],
                env=env, capture_output=True, text=True, check=True,
            )
            payload = json.loads(out.stdout.strip().splitlines()[-1])
            results[workload][label] = payload["seconds"]

    print(f"{'workload':<16} {'numba':>12} {'numpy':>12} {'speedup':>9}")
    for workload, row in results.items():
        speedup = row["numpy"] / row["numba"] if row["numba"] > 0 else float("inf")
        print(
            f"{workload:<16} {row['numba'] * 1e3:>10.2f}ms {row['numpy'] * 1e3:>10.2f}ms "
            f"{speedup:>8.1f}x"
        )


if __name__ == "__main__":
    main()
