"""Hot numeric kernels with numba-accelerated and pure-numpy implementations.

Two kernels dominate runtime: the mean-shift seed iteration over a spatial
grid index (clustering 1.7M destinations) and the row scatter-add that
accumulates embedding gradients every training batch.

Backend selection: the numba path is used when numba imports successfully
and the environment variable ``TAXIDEST_NUMBA`` is not one of ``0``,
``false``, ``no``.  Both implementations are importable directly so tests
and benchmarks can compare them.
"""

from __future__ import annotations

import math
import os

import numpy as np

_DEG2RAD = math.pi / 180.0

_flag = os.environ.get("TAXIDEST_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "no")

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


NUMBA_ENABLED = HAS_NUMBA and _want_numba


def backend() -> str:
    """Name of the active kernel backend: ``numba`` or ``numpy``."""
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# Embedding-gradient scatter-add
# ---------------------------------------------------------------------------


def scatter_add_rows_numpy(out: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> None:
    """out[idx[i], :] += rows[i, :] with repeated indices accumulating."""
    np.add.at(out, idx, rows)


@njit(cache=True)
def _scatter_add_rows_jit(out, idx, rows):  # pragma: no cover - compiled
    for i in range(idx.shape[0]):
        j = idx[i]
        for k in range(rows.shape[1]):
            out[j, k] += rows[i, k]


def scatter_add_rows_numba(out: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> None:
    _scatter_add_rows_jit(out, np.ascontiguousarray(idx), np.ascontiguousarray(rows))


scatter_add_rows = scatter_add_rows_numba if NUMBA_ENABLED else scatter_add_rows_numpy


# ---------------------------------------------------------------------------
# Mean-shift seed iteration over a spatial grid
# ---------------------------------------------------------------------------
#
# Points and seeds are (lat, lon) in degrees, float64.  Distances are
# equirectangular meters with the per-pair mean latitude, matching the
# training loss metric.  The grid is an over-approximating index only:
# cell size >= bandwidth in both axes, so the 3x3 neighborhood of a seed's
# cell is a superset of its bandwidth ball; exact distances filter inside.


class GridIndex:
    """CSR-style spatial grid over points, cell size >= bandwidth."""

    def __init__(self, lat: np.ndarray, lon: np.ndarray, bandwidth_m: float, radius_m: float):
        self.lat = np.ascontiguousarray(lat, dtype=np.float64)
        self.lon = np.ascontiguousarray(lon, dtype=np.float64)
        self.lat0 = float(self.lat.min())
        self.lon0 = float(self.lon.min())
        # Degrees per bandwidth; longitude scaled at the coarsest (widest)
        # latitude in range so cells never under-cover the metric ball.
        self.cell_lat = bandwidth_m / radius_m / _DEG2RAD
        max_abs_lat = float(np.max(np.abs(self.lat)))
        cos_floor = max(math.cos(min(max_abs_lat * _DEG2RAD, math.radians(89.0))), 1e-3)
        self.cell_lon = bandwidth_m / (radius_m * cos_floor) / _DEG2RAD

        row = np.floor((self.lat - self.lat0) / self.cell_lat).astype(np.int64)
        col = np.floor((self.lon - self.lon0) / self.cell_lon).astype(np.int64)
        self.n_rows = int(row.max()) + 1
        self.n_cols = int(col.max()) + 1
        if self.n_rows > 2**30 or self.n_cols > 2**30:
            raise ValueError("grid too fine for input extent; increase bandwidth")
        # +3 leaves room for the +-1 neighbor ring around boundary cells.
        self.key_stride = self.n_cols + 3
        keys = (row + 1) * self.key_stride + (col + 1)
        self.order = np.argsort(keys, kind="stable").astype(np.int64)
        sorted_keys = keys[self.order]
        uniq, start, count = np.unique(sorted_keys, return_index=True, return_counts=True)
        self.cell_keys = uniq.astype(np.int64)
        self.cell_start = start.astype(np.int64)
        self.cell_count = count.astype(np.int64)

    def cell_of(self, lat: float, lon: float) -> tuple[int, int]:
        r = int(math.floor((lat - self.lat0) / self.cell_lat))
        c = int(math.floor((lon - self.lon0) / self.cell_lon))
        return r, c


def _iterate_seeds_numpy(
    grid: GridIndex,
    seeds_lat: np.ndarray,
    seeds_lon: np.ndarray,
    bandwidth_m: float,
    tol_m: float,
    max_iterations: int,
    radius_m: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Pure-numpy reference path, one seed at a time."""
    n = seeds_lat.shape[0]
    out = np.empty((n, 2), dtype=np.float64)
    iters = np.zeros(n, dtype=np.int64)
    bw2 = (bandwidth_m / radius_m) ** 2  # radians^2
    lat_r = grid.lat * _DEG2RAD
    lon_r = grid.lon * _DEG2RAD
    for s in range(n):
        y_lat = float(seeds_lat[s])
        y_lon = float(seeds_lon[s])
        it = 0
        while it < max_iterations:
            it += 1
            members = _window_members_numpy(grid, lat_r, lon_r, y_lat, y_lon, bw2)
            if members.size == 0:
                break
            new_lat = float(np.mean(grid.lat[members]))
            new_lon = float(np.mean(grid.lon[members]))
            d_phi = (new_lat - y_lat) * _DEG2RAD
            d_lam = (new_lon - y_lon) * _DEG2RAD * math.cos(
                0.5 * (new_lat + y_lat) * _DEG2RAD
            )
            shift_m = radius_m * math.hypot(d_phi, d_lam)
            y_lat, y_lon = new_lat, new_lon
            # Refine past tol to the exact fixed point so seeds of one basin
            # land bit-identically; flat-kernel membership stabilizes fast.
            if shift_m == 0.0:
                break
        out[s, 0] = y_lat
        out[s, 1] = y_lon
        iters[s] = it
    return out, iters


def _window_members_numpy(grid, lat_r, lon_r, y_lat, y_lon, bw2):
    r, c = grid.cell_of(y_lat, y_lon)
    if r < -1 or r > grid.n_rows or c < -1 or c > grid.n_cols:
        return np.empty(0, dtype=np.int64)
    chunks = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            key = (r + dr + 1) * grid.key_stride + (c + dc + 1)
            j = np.searchsorted(grid.cell_keys, key)
            if j < grid.cell_keys.size and grid.cell_keys[j] == key:
                a = grid.cell_start[j]
                chunks.append(grid.order[a : a + grid.cell_count[j]])
    if not chunks:
        return np.empty(0, dtype=np.int64)
    cand = np.concatenate(chunks)
    y_phi = y_lat * _DEG2RAD
    d_phi = lat_r[cand] - y_phi
    d_lam = (lon_r[cand] - y_lon * _DEG2RAD) * np.cos(0.5 * (lat_r[cand] + y_phi))
    within = d_phi * d_phi + d_lam * d_lam <= bw2
    return cand[within]


@njit(cache=True)
def _iterate_seeds_jit(
    lat,
    lon,
    order,
    cell_keys,
    cell_start,
    cell_count,
    key_stride,
    n_rows,
    n_cols,
    lat0,
    lon0,
    cell_lat,
    cell_lon,
    seeds_lat,
    seeds_lon,
    bandwidth_m,
    max_iterations,
    radius_m,
):  # pragma: no cover - compiled
    n = seeds_lat.shape[0]
    out = np.empty((n, 2), dtype=np.float64)
    iters = np.zeros(n, dtype=np.int64)
    bw2 = (bandwidth_m / radius_m) ** 2
    deg2rad = _DEG2RAD
    for s in range(n):
        y_lat = seeds_lat[s]
        y_lon = seeds_lon[s]
        it = 0
        while it < max_iterations:
            it += 1
            r = int(math.floor((y_lat - lat0) / cell_lat))
            c = int(math.floor((y_lon - lon0) / cell_lon))
            if r < -1 or r > n_rows or c < -1 or c > n_cols:
                break
            sum_lat = 0.0
            sum_lon = 0.0
            cnt = 0
            y_phi = y_lat * deg2rad
            y_lam = y_lon * deg2rad
            for dr in range(-1, 2):
                for dc in range(-1, 2):
                    key = (r + dr + 1) * key_stride + (c + dc + 1)
                    j = np.searchsorted(cell_keys, key)
                    if j < cell_keys.shape[0] and cell_keys[j] == key:
                        a = cell_start[j]
                        b = a + cell_count[j]
                        for t in range(a, b):
                            i = order[t]
                            p_phi = lat[i] * deg2rad
                            d_phi = p_phi - y_phi
                            d_lam = (lon[i] * deg2rad - y_lam) * math.cos(
                                0.5 * (p_phi + y_phi)
                            )
                            if d_phi * d_phi + d_lam * d_lam <= bw2:
                                sum_lat += lat[i]
                                sum_lon += lon[i]
                                cnt += 1
            if cnt == 0:
                break
            new_lat = sum_lat / cnt
            new_lon = sum_lon / cnt
            d_phi = (new_lat - y_lat) * deg2rad
            d_lam = (new_lon - y_lon) * deg2rad * math.cos(
                0.5 * (new_lat + y_lat) * deg2rad
            )
            shift_m = radius_m * math.sqrt(d_phi * d_phi + d_lam * d_lam)
            y_lat = new_lat
            y_lon = new_lon
            if shift_m == 0.0:
                break
        out[s, 0] = y_lat
        out[s, 1] = y_lon
        iters[s] = it
    return out, iters


def _iterate_seeds_numba(
    grid: GridIndex,
    seeds_lat: np.ndarray,
    seeds_lon: np.ndarray,
    bandwidth_m: float,
    tol_m: float,
    max_iterations: int,
    radius_m: float,
) -> tuple[np.ndarray, np.ndarray]:
    return _iterate_seeds_jit(
        grid.lat,
        grid.lon,
        grid.order,
        grid.cell_keys,
        grid.cell_start,
        grid.cell_count,
        grid.key_stride,
        grid.n_rows,
        grid.n_cols,
        grid.lat0,
        grid.lon0,
        grid.cell_lat,
        grid.cell_lon,
        np.ascontiguousarray(seeds_lat, dtype=np.float64),
        np.ascontiguousarray(seeds_lon, dtype=np.float64),
        float(bandwidth_m),
        int(max_iterations),
        float(radius_m),
    )


iterate_seeds = _iterate_seeds_numba if NUMBA_ENABLED else _iterate_seeds_numpy
