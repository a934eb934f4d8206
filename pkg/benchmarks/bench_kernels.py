"""Time the compiled and numpy kernels on the same inputs.

Usage: python benchmarks/bench_kernels.py [n_developers] [repeats]
"""

import sys
import time

import numpy as np

from skillfrontier._backend import get_kernels
from skillfrontier.panel import build_outcomes
from skillfrontier.sim import SimPanelConfig, draw_population, records_from_run, run_population


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(n=2000, repeats=5):
    try:
        get_kernels("cython")
    except ImportError:
        print("compiled kernels not built; only the fallback is available")
        return 1
    config = SimPanelConfig(n_developers=n, seed=0)
    draws = draw_population(config)
    print(f"{n} developers x {config.n_periods} months, best of {repeats}")
    print(f"{'kernel':<16}{'cython (s)':>12}{'python (s)':>12}{'speedup':>10}")
    res = {}
    for name in ("cython", "python"):
        res[name] = best_of(lambda: run_population(draws, config.model, backend=name), repeats)
    assert np.array_equal(res["cython"][1].repos, res["python"][1].repos)
    c, p = res["cython"][0], res["python"][0]
    print(f"{'simulate_block':<16}{c:>12.4f}{p:>12.4f}{p / c:>10.1f}")

    records = records_from_run(res["cython"][1], draws, config)
    adoption = {i + 1: int(g) for i, g in enumerate(draws.first_treat)}
    win = (1, config.n_periods)
    for name in ("cython", "python"):
        res[name] = best_of(lambda: build_outcomes(records, adoption, window=win, backend=name), repeats)
    c, p = res["cython"][0], res["python"][0]
    print(f"{'build_outcomes':<16}{c:>12.4f}{p:>12.4f}{p / c:>10.1f}")
    return 0


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:3]]
    sys.exit(main(*args))
