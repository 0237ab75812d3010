"""Benchmark the numba kernels against their pure-numpy fallbacks.

Times the two hot kernels on growing synthetic workloads:
  - mean-shift seed iteration over the spatial grid index
  - embedding-gradient row scatter-add

Usage:
    python benchmarks/bench_kernels.py

Set TAXIDEST_NUMBA=0 to confirm the package itself falls back to the numpy
path; this script always times both implementations directly.
"""

import math
import time

import numpy as np

from taxidest import _kernels
from taxidest.geo import EARTH

R = EARTH.radius_m
DEG_LAT = R * math.pi / 180.0


def blobs(rng, n_per_blob, n_blobs=6, sigma_m=120.0, spacing_m=3000.0):
    parts = []
    for i in range(n_blobs):
        east = i * spacing_m + rng.normal(0, sigma_m, n_per_blob)
        north = (i % 2) * spacing_m + rng.normal(0, sigma_m, n_per_blob)
        lat = 41.15 + north / DEG_LAT
        lon = -8.61 + east / (DEG_LAT * math.cos(math.radians(41.15)))
        parts.append(np.column_stack([lat, lon]))
    return np.concatenate(parts)


def time_call(fn, *args, repeat=3):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_mean_shift():
    print("mean-shift seed iteration (bandwidth 500 m, all points as seeds)")
    print(f"{'points':>9} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for n_per_blob in (200, 1000, 5000):
        pts = blobs(rng, n_per_blob)
        grid = _kernels.GridIndex(pts[:, 0], pts[:, 1], 500.0, R)
        args = (grid, pts[:, 0], pts[:, 1], 500.0, 1.0, 100, R)
        if _kernels.HAS_NUMBA:
            _kernels._iterate_seeds_numba(*args)  # compile before timing
            t_nb = time_call(_kernels._iterate_seeds_numba, *args)
        else:
            t_nb = math.nan
        t_np = time_call(_kernels._iterate_seeds_numpy, *args, repeat=1)
        ratio = t_np / t_nb if t_nb == t_nb else math.nan
        print(f"{len(pts):>9} {t_np:>9.3f}s {t_nb:>9.3f}s {ratio:>7.1f}x")


def bench_scatter_add():
    print("\nembedding-gradient scatter-add (vocab 60000, width 10)")
    print(f"{'rows':>9} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    rng = np.random.default_rng(1)
    for n in (10_000, 100_000, 1_000_000):
        idx = rng.integers(0, 60_000, n)
        rows = rng.normal(0, 1, (n, 10)).astype(np.float32)
        out = np.zeros((60_000, 10), dtype=np.float32)
        t_np = time_call(_kernels.scatter_add_rows_numpy, out, idx, rows)
        if _kernels.HAS_NUMBA:
            _kernels.scatter_add_rows_numba(out, idx, rows)  # compile
            t_nb = time_call(_kernels.scatter_add_rows_numba, out, idx, rows)
        else:
            t_nb = math.nan
        ratio = t_np / t_nb if t_nb == t_nb else math.nan
        print(f"{n:>9} {t_np*1e3:>8.2f}ms {t_nb*1e3:>8.2f}ms {ratio:>7.1f}x")


if __name__ == "__main__":
    print(f"active backend: {_kernels.backend()}  (numba installed: {_kernels.HAS_NUMBA})\n")
    bench_mean_shift()
    bench_scatter_add()
