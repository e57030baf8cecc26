"""Patch-weighted averaging kernel for the non-local means filter.

Semantics shared by both paths: for voxels x in the volume and y in the
search window around x (intersected with the volume), the patch distance is

    d(x, y) = sum_z G(z) * (I(x+z) - I(y+z))^2

over patch offsets z where BOTH x+z and y+z fall inside the volume; offsets
falling outside are simply dropped, without reweighting. The output is

    out(x) = sum_y w(x,y) I(y) / sum_y w(x,y),   w = exp(-d / h^2).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from ..backend import njit, use_numba


def patch_weights(patch_radius: int, sigma: float):
    """3D Gaussian patch weights normalized to sum 1, as (offsets, weights)."""
    r = patch_radius
    ax = np.arange(-r, r + 1)
    gz, gy, gx = np.meshgrid(ax, ax, ax, indexing="ij")
    offs = np.column_stack([gz.ravel(), gy.ravel(), gx.ravel()]).astype(np.int64)
    w = np.exp(-(offs[:, 0] ** 2 + offs[:, 1] ** 2 + offs[:, 2] ** 2) / (2.0 * sigma * sigma))
    return offs, w / w.sum()


@njit(cache=True)
def _correlate_axis_zero(vol, weights, axis, out):
    # correlation along one axis with zero fill outside the volume
    nz, ny, nx = vol.shape
    rad = weights.shape[0] // 2
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                acc = 0.0
                for k in range(weights.shape[0]):
                    if axis == 0:
                        i = z + k - rad
                        if 0 <= i < nz:
                            acc += weights[k] * vol[i, y, x]
                    elif axis == 1:
                        i = y + k - rad
                        if 0 <= i < ny:
                            acc += weights[k] * vol[z, i, x]
                    else:
                        i = x + k - rad
                        if 0 <= i < nx:
                            acc += weights[k] * vol[z, y, i]
                out[z, y, x] = acc


@njit(cache=True)
def _nlm_numba(img, h2, g1, search):
    # offset-major accumulation: per search offset, squared differences are
    # patch-weighted by a separable zero-fill Gaussian correlation, which
    # drops out-of-volume patch offsets exactly as the definition requires
    nz, ny, nx = img.shape
    norm = np.zeros((nz, ny, nx), np.float64)
    acc = np.zeros((nz, ny, nx), np.float64)
    dsq = np.empty((nz, ny, nx), np.float64)
    tmp = np.empty((nz, ny, nx), np.float64)
    for sz in range(-search, search + 1):
        for sy in range(-search, search + 1):
            for sx in range(-search, search + 1):
                for z in range(nz):
                    bz = z + sz
                    for y in range(ny):
                        by = y + sy
                        for x in range(nx):
                            bx = x + sx
                            if 0 <= bz < nz and 0 <= by < ny and 0 <= bx < nx:
                                diff = img[z, y, x] - img[bz, by, bx]
                                dsq[z, y, x] = diff * diff
                            else:
                                dsq[z, y, x] = 0.0
                _correlate_axis_zero(dsq, g1, 0, tmp)
                _correlate_axis_zero(tmp, g1, 1, dsq)
                _correlate_axis_zero(dsq, g1, 2, tmp)
                for z in range(nz):
                    bz = z + sz
                    if bz < 0 or bz >= nz:
                        continue
                    for y in range(ny):
                        by = y + sy
                        if by < 0 or by >= ny:
                            continue
                        for x in range(nx):
                            bx = x + sx
                            if 0 <= bx < nx:
                                w = math.exp(-tmp[z, y, x] / h2)
                                norm[z, y, x] += w
                                acc[z, y, x] += w * img[bz, by, bx]
    return acc / norm


def _shift_valid(img: np.ndarray, s):
    """img translated by -s with a validity mask (True where source existed)."""
    nz, ny, nx = img.shape
    out = np.zeros_like(img)
    valid = np.zeros(img.shape, bool)
    src = []
    dst = []
    for n, d in zip(img.shape, s):
        lo_dst, hi_dst = max(0, -d), min(n, n - d)
        if lo_dst >= hi_dst:
            return out, valid
        dst.append(slice(lo_dst, hi_dst))
        src.append(slice(lo_dst + d, hi_dst + d))
    out[tuple(dst)] = img[tuple(src)]
    valid[tuple(dst)] = True
    return out, valid


def _nlm_numpy(img, h2, patch_radius, patch_sigma, search):
    # Per search offset s: squared differences, masked outside the window,
    # then a zero-fill separable Gaussian patch correlation. Zero filling
    # reproduces the "invalid patch offsets are dropped" rule exactly.
    # Per-axis normalization makes the 3D product sum to 1 over the patch,
    # matching patch_weights().
    g1 = np.exp(-(np.arange(-patch_radius, patch_radius + 1) ** 2) / (2.0 * patch_sigma**2))
    g1 = g1 / g1.sum()
    norm = np.zeros(img.shape, np.float64)
    acc = np.zeros(img.shape, np.float64)
    rng = range(-search, search + 1)
    for sz in rng:
        for sy in rng:
            for sx in rng:
                shifted, valid = _shift_valid(img, (sz, sy, sx))
                dsq = np.where(valid, (img - shifted) ** 2, 0.0)
                for axis in range(3):
                    dsq = ndimage.correlate1d(dsq, g1, axis=axis, mode="constant", cval=0.0)
                w = np.where(valid, np.exp(-dsq / h2), 0.0)
                norm += w
                acc += w * shifted
    return acc / norm


def nlm_field(img: np.ndarray, h: float, patch_radius: int, patch_sigma: float, search: int):
    img = np.asarray(img, np.float64)
    h2 = float(h) * float(h)
    if use_numba():
        g1 = np.exp(
            -(np.arange(-patch_radius, patch_radius + 1) ** 2) / (2.0 * patch_sigma**2)
        )
        g1 = g1 / g1.sum()
        return _nlm_numba(img, h2, g1, search)
    return _nlm_numpy(img, h2, patch_radius, patch_sigma, search)
