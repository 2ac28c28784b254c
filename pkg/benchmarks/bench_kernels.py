"""Time the numba and numpy kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run once per backend before timing so numba compilation is
excluded; outputs of the two backends are compared as a sanity check.
"""
import argparse
import time

import numpy as np

from isoblock import kernels
from isoblock._accel import HAS_NUMBA, NUMBA, NUMPY
from isoblock.lattice import PointCloud, build_compressed_grid
from isoblock.estimators import _candidate_bounds


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(rng):
    y2 = rng.normal(size=(50, 20))
    y3 = rng.normal(size=(10, 10, 10))
    seq = rng.normal(size=5000).cumsum() * 0.01 + rng.normal(size=5000)
    cloud = PointCloud(rng.random((60, 2)), rng.normal(size=60))
    grid = build_compressed_grid(cloud)
    lo, hi = _candidate_bounds(grid, [0.5, 0.5])
    yield "lattice_branches 50x20", lambda b: kernels.lattice_branches(y2, backend=b)
    yield "lattice_branches 10x10x10", lambda b: kernels.lattice_branches(y3, backend=b)
    yield "pava n=5000", lambda b: kernels.pava(seq, None, backend=b)
    groups = kernels.lattice_line_groups(y2.shape)
    yield "dykstra 50x20", lambda b: kernels.dykstra_chains(
        y2.ravel(), np.ones(y2.size), groups, 1e-8, 10_000, backend=b)[0]
    yield "point_branches n=60", lambda b: kernels.point_branches(
        grid.counts, grid.sums, lo, hi, backend=b)


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(o, dtype=float)) for o in out if o is not None])
    return np.ravel(np.asarray(out, dtype=float))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    backends = [NUMBA, NUMPY] if HAS_NUMBA else [NUMPY]
    print(f"{'kernel':28s} " + " ".join(f"{b:>10s}" for b in backends) + "   speedup  max|diff|")
    for name, fn in cases(np.random.default_rng(args.seed)):
        res = {}
        for b in backends:
            fn(b)  # warm-up / compile
            res[b] = best_of(lambda: fn(b), args.repeat)
        line = f"{name:28s} " + " ".join(f"{res[b][0] * 1e3:8.2f}ms" for b in backends)
        if len(backends) == 2:
            gap = float(np.max(np.abs(_flat(res[NUMBA][1]) - _flat(res[NUMPY][1]))))
            line += f"   {res[NUMPY][0] / res[NUMBA][0]:6.1f}x  {gap:.1e}"
        print(line, flush=True)


if __name__ == "__main__":
    main()
