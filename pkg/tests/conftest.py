import numpy as np
import pytest

from tomoseg.volgrid import BinaryVolume, LabelVolume, ScalarVolume


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def scalar(arr, spacing=1.0):
    return ScalarVolume(np.asarray(arr, np.uint16), spacing)


def binary(arr, spacing=1.0):
    return BinaryVolume(np.asarray(arr, bool), spacing)


def labels(arr, spacing=1.0):
    return LabelVolume(np.asarray(arr, np.int32), spacing)


def ball_mask(shape, center, radius):
    """Digital ball {|x - c| <= r} as a boolean volume (z, y, x)."""
    nz, ny, nx = shape
    zz, yy, xx = np.mgrid[0:nz, 0:ny, 0:nx]
    cz, cy, cx = center
    return (zz - cz) ** 2 + (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
