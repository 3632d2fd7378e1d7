"""Time the numba kernels against the numpy fallbacks.

    python benchmarks/bench_kernels.py [--n 5000] [--queries 4000] [--repeat 3]

Both backends are importable side by side, so one process times both.  The
numba timings exclude compilation (one warm-up call each).
"""

import argparse
import time

import numpy as np

from anigauss import _accel
from anigauss.kernel import (WidthParams, _indicator_numpy, _phi_block_numpy,
                             compute_widths, indicator_values, phi_block)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=5000, help="cloud size")
    p.add_argument("--queries", type=int, default=4000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed")

    rng = np.random.default_rng(a.seed)
    pts = rng.random((a.n, 3))
    queries = rng.random((a.queries, 3))
    widths = compute_widths(queries, pts, WidthParams())
    mu = rng.standard_normal(3 * a.n) * 1e-3
    mu3 = mu.reshape(-1, 3)
    adaptive = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 20.0]])
    pairs = a.n * a.queries

    saved = _accel.USE_NUMBA
    _accel.USE_NUMBA = True
    rows = []
    try:
        for name, cs in (("isotropic", np.zeros((1, 3))), ("axes L=1", np.eye(3)),
                         ("thin, |c3|=20", adaptive)):
            indicator_values(cs, queries[:8], pts, widths[:8], mu)
            fast = best_of(lambda: indicator_values(cs, queries, pts, widths, mu), a.repeat)
            out = np.empty(a.queries)
            slow = best_of(lambda: _indicator_numpy(cs, queries, pts, widths, mu3, out), a.repeat)
            rows.append((f"indicator, {name}", pairs * len(cs), fast, slow))

        c = np.array([0.3, -1.2, 2.0])
        sub = min(a.queries, 1000)
        phi_block(c, queries[:8], pts, widths[:8])
        fast = best_of(lambda: phi_block(c, queries[:sub], pts, widths[:sub]), a.repeat)
        buf = np.empty((sub, 3 * a.n))
        slow = best_of(lambda: _phi_block_numpy(c, queries[:sub], pts, widths[:sub], buf),
                       a.repeat)
        rows.append(("phi_block", a.n * sub, fast, slow))
    finally:
        _accel.USE_NUMBA = saved

    print(f"N={a.n}, queries={a.queries}, best of {a.repeat}; ns per (query, point, velocity)")
    print(f"{'kernel':32s} {'numba':>9s} {'numpy':>9s} {'speedup':>8s}")
    for name, work, fast, slow in rows:
        print(f"{name:32s} {fast / work * 1e9:9.2f} {slow / work * 1e9:9.2f} {slow / fast:7.1f}x")


if __name__ == "__main__":
    main()
