"""Superellipsoid rasterization for the phantom generator.

A particle is the set |u/a|^p + |v/b|^p + |w/c|^p <= 1 in its local frame;
the kernel stamps particle ids into a label grid over the particle's
bounding box, leaving already-claimed voxels untouched (the caller checks
overlap beforehand).
"""

from __future__ import annotations

import numpy as np

from ..backend import njit, use_numba


@njit(cache=True)
def _stamp_numba(labels, rot, center, semi, expo, label, z0, z1, y0, y1, x0, x1, check_only):
    # for exponent >= 2 the unit ellipsoid is inside the superellipsoid and
    # any voxel with a local coordinate beyond 1 is outside, so the exact
    # power test is only needed on the shell between the two quadrics
    quick = expo >= 2.0
    hit = 0
    for z in range(z0, z1):
        dz = z - center[2]
        for y in range(y0, y1):
            dy = y - center[1]
            for x in range(x0, x1):
                dx = x - center[0]
                u = (rot[0, 0] * dx + rot[0, 1] * dy + rot[0, 2] * dz) / semi[0]
                v = (rot[1, 0] * dx + rot[1, 1] * dy + rot[1, 2] * dz) / semi[1]
                w = (rot[2, 0] * dx + rot[2, 1] * dy + rot[2, 2] * dz) / semi[2]
                if quick:
                    if abs(u) > 1.0 or abs(v) > 1.0 or abs(w) > 1.0:
                        continue
                    q2 = u * u + v * v + w * w
                    inside = q2 <= 1.0 or (abs(u) ** expo + abs(v) ** expo + abs(w) ** expo) <= 1.0
                else:
                    inside = (abs(u) ** expo + abs(v) ** expo + abs(w) ** expo) <= 1.0
                if inside:
                    if labels[z, y, x] != 0:
                        hit += 1
                    elif not check_only:
                        labels[z, y, x] = label
    return hit


def _stamp_numpy(labels, rot, center, semi, expo, label, z0, z1, y0, y1, x0, x1, check_only):
    z, y, x = np.meshgrid(
        np.arange(z0, z1, dtype=np.float64),
        np.arange(y0, y1, dtype=np.float64),
        np.arange(x0, x1, dtype=np.float64),
        indexing="ij",
    )
    dx, dy, dz = x - center[0], y - center[1], z - center[2]
    u = (rot[0, 0] * dx + rot[0, 1] * dy + rot[0, 2] * dz) / semi[0]
    v = (rot[1, 0] * dx + rot[1, 1] * dy + rot[1, 2] * dz) / semi[1]
    w = (rot[2, 0] * dx + rot[2, 1] * dy + rot[2, 2] * dz) / semi[2]
    power = np.abs(u) ** expo + np.abs(v) ** expo + np.abs(w) ** expo
    if expo >= 2.0:
        # same branch structure as the numba path for bit-identical masks
        box = (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0) & (np.abs(w) <= 1.0)
        inside = box & ((u * u + v * v + w * w <= 1.0) | (power <= 1.0))
    else:
        inside = power <= 1.0
    block = labels[z0:z1, y0:y1, x0:x1]
    hit = int((inside & (block != 0)).sum())
    if not check_only:
        block[inside & (block == 0)] = label
    return hit


def stamp_superellipsoid(labels, rot, center, semi, expo, label, check_only=False) -> int:
    """Rasterize one particle; returns the count of voxels already claimed
    by other particles (0 means the placement does not intersect)."""
    nz, ny, nx = labels.shape
    reach = float(np.max(semi)) + 1.0
    x0 = max(0, int(np.floor(center[0] - reach)))
    x1 = min(nx, int(np.ceil(center[0] + reach)) + 1)
    y0 = max(0, int(np.floor(center[1] - reach)))
    y1 = min(ny, int(np.ceil(center[1] + reach)) + 1)
    z0 = max(0, int(np.floor(center[2] - reach)))
    z1 = min(nz, int(np.ceil(center[2] + reach)) + 1)
    if x0 >= x1 or y0 >= y1 or z0 >= z1:
        return 0
    rot = np.ascontiguousarray(rot, np.float64)
    center = np.ascontiguousarray(center, np.float64)
    semi = np.ascontiguousarray(semi, np.float64)
    if use_numba():
        return int(
            _stamp_numba(
                labels, rot, center, semi, float(expo), np.int32(label),
                z0, z1, y0, y1, x0, x1, check_only,
            )
        )
    return _stamp_numpy(
        labels, rot, center, semi, float(expo), np.int32(label), z0, z1, y0, y1, x0, x1, check_only
    )
