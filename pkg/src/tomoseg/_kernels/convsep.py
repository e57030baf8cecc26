"""Separable 1D correlation along volume axes with mirror borders.

Border policy everywhere is edge-inclusive mirroring (a b c d | d c b a),
matching scipy.ndimage mode="reflect". Feeds the Gaussian blur and the Sobel
gradient.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..backend import njit, use_numba


@njit(cache=True)
def _correlate_last_numba(vol, weights, out):
    nz, ny, nx = vol.shape
    nk = weights.shape[0]
    rad = nk // 2
    for z in range(nz):
        for y in range(ny):
            # interior: no index folding needed
            for x in range(rad, nx - rad):
                acc = 0.0
                for k in range(nk):
                    acc += weights[k] * vol[z, y, x + k - rad]
                out[z, y, x] = acc
            # borders: mirror-fold until inside
            for x in range(0, min(rad, nx)):
                acc = 0.0
                for k in range(nk):
                    i = x + k - rad
                    while i < 0 or i >= nx:
                        if i < 0:
                            i = -i - 1
                        else:
                            i = 2 * nx - 1 - i
                    acc += weights[k] * vol[z, y, i]
                out[z, y, x] = acc
            for x in range(max(nx - rad, rad, 0), nx):
                acc = 0.0
                for k in range(nk):
                    i = x + k - rad
                    while i < 0 or i >= nx:
                        if i < 0:
                            i = -i - 1
                        else:
                            i = 2 * nx - 1 - i
                    acc += weights[k] * vol[z, y, i]
                out[z, y, x] = acc
    return out


def _correlate_axis_numba(vol: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    moved = np.ascontiguousarray(np.moveaxis(vol, axis, 2), dtype=np.float64)
    out = np.empty_like(moved)
    _correlate_last_numba(moved, np.asarray(weights, np.float64), out)
    return np.ascontiguousarray(np.moveaxis(out, 2, axis))


def _correlate_axis_numpy(vol: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    return ndimage.correlate1d(
        np.asarray(vol, np.float64), np.asarray(weights, np.float64), axis=axis, mode="reflect"
    )


def correlate_separable(vol: np.ndarray, weights_per_axis) -> np.ndarray:
    """Correlate with one 1D kernel per axis (z, y, x order); None skips an axis."""
    corr = _correlate_axis_numba if use_numba() else _correlate_axis_numpy
    out = np.asarray(vol, np.float64)
    for axis, w in enumerate(weights_per_axis):
        if w is not None:
            out = corr(out, w, axis)
    return out


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at +-ceil(3*sigma), renormalized to sum 1."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    rad = int(np.ceil(3.0 * sigma))
    x = np.arange(-rad, rad + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur_field(field: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing of a float field, mirror borders."""
    k = gaussian_kernel(sigma)
    return correlate_separable(field, (k, k, k))


SOBEL_DERIV = np.array([-1.0, 0.0, 1.0])
SOBEL_SMOOTH = np.array([1.0, 2.0, 1.0])


def sobel_magnitude_field(field: np.ndarray) -> np.ndarray:
    """Euclidean norm of the three 3D Sobel responses (derivative [-1,0,1],
    smoothing [1,2,1] across the other axes)."""
    field = np.asarray(field, np.float64)
    acc = np.zeros_like(field)
    for axis in range(3):
        weights = [SOBEL_SMOOTH, SOBEL_SMOOTH, SOBEL_SMOOTH]
        weights[axis] = SOBEL_DERIV
        g = correlate_separable(field, weights)
        acc += g * g
    return np.sqrt(acc)
