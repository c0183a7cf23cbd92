"""Time the trajectory kernel on each available backend.

Usage::

    python benchmarks/bench_kernels.py [--n-traj 2048] [--steps 2000] [--repeat 3]

Only ``advance`` is timed; the uniforms are drawn once up front so the random
number generator does not dilute the comparison.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from zpcool import _backend
from zpcool.moments import regaussification_window
from zpcool.params import SCENARIO_PARAMS


def bench(kern, n_traj, steps, repeat, dt=1e-3):
    p = SCENARIO_PARAMS
    U = np.random.default_rng(0).random((steps, n_traj))
    window_steps = int(np.ceil(regaussification_window(p) / dt))
    best = np.inf
    for _ in range(repeat):
        y = np.tile([0.0, 0.0, p.Nbar], (n_traj, 1))
        since = np.full(n_traj, 2**62, dtype=np.int64)
        logp = np.zeros(n_traj)
        nclicks = np.zeros(n_traj, dtype=np.int64)
        first = np.full(n_traj, np.nan)
        t0 = time.perf_counter()
        kern.advance(y, since, logp, nclicks, first, U, 0, dt, False, p.G, p.kappa, p.gamma, p.Nbar,
                     p.eta * p.kappa_ex, window_steps)
        best = min(best, time.perf_counter() - t0)
    return best, y, nclicks


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-traj", type=int, default=2048)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    results = {}
    for name, kern in _backend.available().items():
        t, y, clicks = bench(kern, args.n_traj, args.steps, args.repeat)
        results[name] = (t, y, clicks)
        rate = args.n_traj * args.steps / t
        print(f"{name:>9}: {t * 1e3:9.2f} ms  ({rate / 1e6:7.2f} M trajectory-steps/s)")
    if len(results) == 2:
        (tp, yp, cp), (tc, yc, cc) = results["python"], results["compiled"]
        print(f"  speedup: {tp / tc:.1f}x")
        print(f"  identical click counts: {bool(np.array_equal(cp, cc))}, "
              f"max state difference: {np.abs(yp - yc).max():.2e}")
    else:
        print("compiled backend not built; only the python fallback was timed")


if __name__ == "__main__":
    main()
