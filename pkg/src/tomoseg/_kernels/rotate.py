"""Nearest-neighbor rigid rotation of a binary volume about its center.

The kernel receives the inverse rotation matrix and samples each output
voxel from the back-rotated position; positions outside the volume read as
background. Rounding is floor(v + 0.5) in both paths.
"""

from __future__ import annotations

import math

import numpy as np

from ..backend import njit, use_numba


@njit(cache=True)
def _rotate_numba(vol, rinv, cx, cy, cz):
    nz, ny, nx = vol.shape
    out = np.zeros((nz, ny, nx), np.bool_)
    for z in range(nz):
        dz = z - cz
        for y in range(ny):
            dy = y - cy
            for x in range(nx):
                dx = x - cx
                sx = rinv[0, 0] * dx + rinv[0, 1] * dy + rinv[0, 2] * dz + cx
                sy = rinv[1, 0] * dx + rinv[1, 1] * dy + rinv[1, 2] * dz + cy
                sz = rinv[2, 0] * dx + rinv[2, 1] * dy + rinv[2, 2] * dz + cz
                ix = int(math.floor(sx + 0.5))
                iy = int(math.floor(sy + 0.5))
                iz = int(math.floor(sz + 0.5))
                if 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz:
                    out[z, y, x] = vol[iz, iy, ix]
    return out


def _rotate_numpy(vol, rinv, cx, cy, cz):
    nz, ny, nx = vol.shape
    z, y, x = np.meshgrid(
        np.arange(nz, dtype=np.float64),
        np.arange(ny, dtype=np.float64),
        np.arange(nx, dtype=np.float64),
        indexing="ij",
    )
    dx, dy, dz = x - cx, y - cy, z - cz
    sx = rinv[0, 0] * dx + rinv[0, 1] * dy + rinv[0, 2] * dz + cx
    sy = rinv[1, 0] * dx + rinv[1, 1] * dy + rinv[1, 2] * dz + cy
    sz = rinv[2, 0] * dx + rinv[2, 1] * dy + rinv[2, 2] * dz + cz
    ix = np.floor(sx + 0.5).astype(np.int64)
    iy = np.floor(sy + 0.5).astype(np.int64)
    iz = np.floor(sz + 0.5).astype(np.int64)
    ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny) & (iz >= 0) & (iz < nz)
    out = np.zeros(vol.shape, bool)
    out[ok] = vol[iz[ok], iy[ok], ix[ok]]
    return out


def rotate_nearest(vol: np.ndarray, rinv: np.ndarray, center) -> np.ndarray:
    vol = np.ascontiguousarray(vol, bool)
    rinv = np.ascontiguousarray(rinv, np.float64)
    cx, cy, cz = (float(c) for c in center)
    if use_numba():
        return _rotate_numba(vol, rinv, cx, cy, cz)
    return _rotate_numpy(vol, rinv, cx, cy, cz)
