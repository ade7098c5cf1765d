#!/usr/bin/env python3
"""Benchmark the compiled kernel against the NumPy fallback.

Usage: python benchmarks/bench_core.py [--seconds 2.0]
"""

import argparse
import time

import numpy as np

import gaitforge as gf
from gaitforge._core import fallback, pack_model

try:
    from gaitforge._core import _kernel
except ImportError:
    _kernel = None


def timed(fn, seconds):
    n = 0
    t0 = time.perf_counter()
    while True:
        fn()
        n += 1
        dt = time.perf_counter() - t0
        if dt >= seconds:
            return n / dt


def bench_backend(name, impl, pm, seconds):
    rng = np.random.default_rng(0)
    q = np.zeros(pm.nq)
    q[1] = 0.894
    q[3:] = rng.uniform(-0.3, 0.3, pm.nq - 3)
    qdot = rng.uniform(-0.5, 0.5, pm.nq)
    act = rng.uniform(0, 0.5, pm.n_muscles)
    dt = 1.0 / 480

    rates = {}
    rates["mass_matrix"] = timed(lambda: impl.mass_matrix(pm, q), seconds)
    rates["muscle_geometry"] = timed(lambda: impl.muscle_geometry(pm, q, qdot), seconds)
    rates["step"] = timed(lambda: impl.step(pm, q.copy(), qdot.copy(), np.zeros(pm.nq), dt), seconds)
    rates["substep_block(16)"] = timed(lambda: impl.substep_block(pm, q, qdot, act, 16, dt), seconds)

    print(f"\n[{name}]")
    for k, v in rates.items():
        print(f"  {k:20s} {v:12.1f} calls/s")
    phys = rates["substep_block(16)"] * 16
    print(f"  physics steps/s via substep_block: {phys:,.0f}  ({phys / 480:.1f}x real time)")
    return rates


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seconds", type=float, default=2.0, help="time budget per measurement")
    args = ap.parse_args()

    model = gf.build_reference_model()
    pm = pack_model(gf.apply_anatomy(model, model.healthy_condition()))

    fb = bench_backend("fallback (NumPy)", fallback, pm, args.seconds)
    if _kernel is None:
        print("\ncompiled kernel not built; skipping comparison")
        return
    ck = bench_backend("compiled (Cython)", _kernel, pm, args.seconds)
    print("\nspeedup (compiled / fallback):")
    for k in fb:
        print(f"  {k:20s} {ck[k] / fb[k]:8.1f}x")


if __name__ == "__main__":
    main()
