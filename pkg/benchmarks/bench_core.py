"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_core.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from sacha import _pykernels

try:
    from sacha import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    grid = rng.random((64, 64)) < 0.25
    grid[0, 0] = False
    free = np.argwhere(~grid)
    pos = free[rng.choice(len(free), 32, replace=False)].astype(np.int64)
    actions = rng.integers(5, size=32).astype(np.int64)
    L = 9
    r = L // 2
    obst = np.pad(grid, r, constant_values=True).astype(np.float64)
    heur = np.pad(rng.random((32, 64, 64)), ((0, 0), (r, r), (r, r)), constant_values=1.0)
    blocked = np.ascontiguousarray(grid, dtype=np.uint8)
    return {
        "bfs_distance_field 64x64": lambda k: k.bfs_distance_field(blocked, 0, 0),
        "resolve_moves 32 agents": lambda k: k.resolve_moves(blocked, pos, actions),
        "render_observations 32 agents": lambda k: k.render_observations(obst, heur, pos, 3, L),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        n = 20
        py = min(timeit.repeat(lambda: fn(_pykernels), number=n, repeat=args.repeat)) / n * 1e3
        if _ckernels is None:
            print(f"{name:32s} {py:10.3f} {'n/a':>10s}")
            continue
        cy = min(timeit.repeat(lambda: fn(_ckernels), number=n, repeat=args.repeat)) / n * 1e3
        print(f"{name:32s} {py:10.3f} {cy:10.3f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
