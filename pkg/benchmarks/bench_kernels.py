"""Numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--points 129] [--repeat 5]

Each line reports the best of ``--repeat`` timings after one warm-up call
(which also triggers compilation) and the max difference between backends.
"""
import argparse
import time

import numpy as np

from plaplab import _accel
from plaplab.catalog import manufactured, v_field
from plaplab.fields import Ball, Grid
from plaplab.potentials import potential_field
from plaplab.solver import KuhnMesh, SolverOptions, solve_dirichlet


def best_of(fn, repeat):
    out = fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def compare(name, make, repeat):
    rows = {}
    for flag in (False, True):
        if flag and not _accel.use_numba():
            continue
        rows[flag] = best_of(make(flag), repeat)
    slow = rows[False][0]
    line = f"{name:<28s} numpy {slow * 1e3:9.2f} ms"
    if True in rows:
        fast = rows[True][0]
        diff = float(np.max(np.abs(np.asarray(rows[True][1]) - np.asarray(rows[False][1]))))
        line += f"   numba {fast * 1e3:9.2f} ms   speedup {slow / fast:6.1f}x   max diff {diff:.1e}"
    else:
        line += "   numba unavailable"
    print(line)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=129)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    m = args.points

    g2 = Grid.cube(2, -1, 1, m)
    U = np.random.default_rng(0).standard_normal((1, g2.size))

    def gradients(flag):
        mesh = KuhnMesh(g2, g2.full_mask(), use_numba=flag)
        return lambda: mesh.gradients(U)

    def scatter(flag):
        mesh = KuhnMesh(g2, g2.full_mask(), use_numba=flag)
        Z = mesh.gradients(U)
        return lambda: mesh.scatter(Z)

    V = v_field(Grid.cube(2, -1, 1, m // 2 + 1), "random-lognormal", seed=0)

    def sweep(flag):
        return lambda: np.nan_to_num(potential_field(V, 0.25, Ball((0.0, 0.0), 0.5), use_numba=flag))

    def solve(flag):
        problem, _ = manufactured(3.0, 2, m // 2 + 1, options=SolverOptions(use_numba=flag))
        return lambda: solve_dirichlet(problem)[0].values

    print(f"grid {m}^2 (sweep and solve on {m // 2 + 1}^2), best of {args.repeat}")
    compare("simplex gradients", gradients, args.repeat)
    compare("simplex scatter", scatter, args.repeat)
    compare("potential center sweep", sweep, args.repeat)
    compare("Newton solve p=3", solve, max(1, args.repeat // 2))


if __name__ == "__main__":
    main()
