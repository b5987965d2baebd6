#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Runs the four hot sweeps on representative desk-scale workloads with both
backends, reports wall times, speedups, and the worst output deviation.

    python3 benchmarks/bench_backends.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from fsmfg import backend
from fsmfg.core import TimeGrid, enumerate_states
from fsmfg.cost import QuadraticCost, coupling_self, psi_linear
from fsmfg import mfg, nplayer


def timeit(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    backends = backend.all_backends()
    if len(backends) < 2:
        print("compiled backend not built; run `pip install -e . --no-build-isolation`")

    model = QuadraticCost(coupling_self(2))
    model_psi = QuadraticCost(coupling_self(2), terminal_cost=psi_linear(2))
    grid = TimeGrid(1.0, 1000)
    idx = enumerate_states(2, 64)

    cases = {
        "solve_mfg d=2 M=1000": lambda: mfg.solve_mfg(model, [0.8, 0.2], grid).theta.values,
        "nplayer N=64 M=1000": lambda: nplayer.solve_equilibrium(model_psi, 64, grid,
                                                                 indexer=idx).values,
        "jointlaw N=64 M=1000": lambda: nplayer.propagate_exact_law(
            model_psi, nplayer.solve_equilibrium(model_psi, 64, grid, indexer=idx),
            [0.5, 0.5], grid).values,
    }

    print(f"{'case':<28} " + " ".join(f"{name:>12}" for name, _ in backends)
          + f" {'speedup':>9} {'max dev':>10}")
    saved = backend._ACTIVE
    try:
        for label, fn in cases.items():
            times = []
            outs = []
            for _, module in backends:
                backend._ACTIVE = module
                t, out = timeit(fn, args.repeat)
                times.append(t)
                outs.append(np.asarray(out))
            dev = max(float(np.abs(outs[0] - o).max()) for o in outs[1:]) if len(outs) > 1 else 0.0
            speed = times[-1] / times[0] if len(times) > 1 else 1.0
            print(f"{label:<28} " + " ".join(f"{t:>11.3f}s" for t in times)
                  + f" {speed:>8.1f}x {dev:>10.2e}")
    finally:
        backend._ACTIVE = saved


if __name__ == "__main__":
    main()
