"""Exact line integrals through voxelised volumes.

Incremental parametric traversal in the style of Siddon / Amanatides-Woo:
the segment is clipped to the grid box, then walked voxel by voxel and each
voxel contributes ``value * intersection length``.
"""

from __future__ import annotations

import numba
import numpy as np

from .volume import Volume

_INF = np.inf


@numba.njit(cache=True, nogil=True, inline="always")
def _axis_setup(a, d, lo, sz, n, tm):
    # voxel index of the first step and its crossing schedule along one axis
    i = int(np.floor((a + tm * d - lo) / sz))
    if i < 0:
        i = 0
    elif i >= n:
        i = n - 1
    if d > 0.0:
        return i, 1, (lo + (i + 1) * sz - a) / d, sz / d
    if d < 0.0:
        return i, -1, (lo + i * sz - a) / d, -sz / d
    return i, 0, _INF, _INF


@numba.njit(cache=True, nogil=True, inline="always")
def _clip(a, d, lo, hi, t0, t1):
    if d == 0.0:
        if a <= lo or a >= hi:
            return 1.0, 0.0
        return t0, t1
    ta = (lo - a) / d
    tb = (hi - a) / d
    if ta > tb:
        ta, tb = tb, ta
    return max(t0, ta), min(t1, tb)


@numba.njit(cache=True, nogil=True)
def _trace(values, lower, size, p1, p2):
    # lower/size/values in (z, y, x) array order; p1, p2 given as (x, y, z)
    nz, ny, nx = values.shape
    az, ay, ax_ = p1[2], p1[1], p1[0]
    dz, dy, dx = p2[2] - az, p2[1] - ay, p2[0] - ax_
    length = np.sqrt(dx * dx + dy * dy + dz * dz)
    if length == 0.0:
        return 0.0
    t0, t1 = _clip(az, dz, lower[0], lower[0] + nz * size[0], 0.0, 1.0)
    t0, t1 = _clip(ay, dy, lower[1], lower[1] + ny * size[1], t0, t1)
    t0, t1 = _clip(ax_, dx, lower[2], lower[2] + nx * size[2], t0, t1)
    if t1 <= t0:
        return 0.0
    tm = t0 + 1e-9 * (t1 - t0)
    iz, sz, nxt_z, dlt_z = _axis_setup(az, dz, lower[0], size[0], nz, tm)
    iy, sy, nxt_y, dlt_y = _axis_setup(ay, dy, lower[1], size[1], ny, tm)
    ix, sx, nxt_x, dlt_x = _axis_setup(ax_, dx, lower[2], size[2], nx, tm)

    total = 0.0
    t = t0
    while t < t1:
        if nxt_z <= nxt_y and nxt_z <= nxt_x:
            t_end = min(nxt_z, t1)
            total += (t_end - t) * values[iz, iy, ix]
            iz += sz
            nxt_z += dlt_z
            if iz < 0 or iz >= nz:
                break
        elif nxt_y <= nxt_x:
            t_end = min(nxt_y, t1)
            total += (t_end - t) * values[iz, iy, ix]
            iy += sy
            nxt_y += dlt_y
            if iy < 0 or iy >= ny:
                break
        else:
            t_end = min(nxt_x, t1)
            total += (t_end - t) * values[iz, iy, ix]
            ix += sx
            nxt_x += dlt_x
            if ix < 0 or ix >= nx:
                break
        t = t_end
    return total * length


@numba.njit(cache=True, nogil=True)
def _trace_many(values, lower, size, p1, p2, out):
    for k in range(p1.shape[0]):
        out[k] = _trace(values, lower, size, p1[k], p2[k])


def line_integral(volume: Volume, p1, p2) -> float:
    """Integral of ``volume`` along the segment ``p1 -> p2`` (points in mm).

    Returns 0 for segments that miss the grid.
    """
    grid = volume.grid
    return float(_trace(np.ascontiguousarray(volume.data, dtype=np.float64),
                        grid.lower, np.asarray(grid.voxel_size),
                        np.asarray(p1, dtype=np.float64), np.asarray(p2, dtype=np.float64)))


def line_integrals(volume: Volume, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Batched :func:`line_integral` for (n, 3) endpoint arrays."""
    p1 = np.ascontiguousarray(p1, dtype=np.float64)
    p2 = np.ascontiguousarray(p2, dtype=np.float64)
    out = np.empty(len(p1))
    grid = volume.grid
    _trace_many(np.ascontiguousarray(volume.data, dtype=np.float64), grid.lower,
                np.asarray(grid.voxel_size), p1, p2, out)
    return out
