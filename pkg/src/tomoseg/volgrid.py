"""Grid containers, voxel metadata and raw file I/O.

One memory layout is used everywhere: ``data[z, y, x]`` C-contiguous, so the
flat byte order is x-fastest. ``dims`` is always reported as ``(nx, ny, nz)``.
Files are headerless little-endian payloads with a text sidecar ``<path>.meta``
holding ``dims=<nx>,<ny>,<nz>``, ``spacing_um=<float>`` and
``element=<u8|u16|u32|bit>``. Bit payloads pack 8 voxels per byte, x-fastest,
least significant bit first.

Volumes are immutable after construction (the constructor takes ownership of
the array and marks it read-only), so any number of threads may share one.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

ELEMENT_DTYPES = {
    "u8": np.dtype("<u1"),
    "u16": np.dtype("<u2"),
    "u32": np.dtype("<u4"),
}
VALID_ELEMENTS = ("u8", "u16", "u32", "bit")


def _own(data: np.ndarray, dtype) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=dtype)
    arr.flags.writeable = False
    return arr


def _check_3d(data: np.ndarray, spacing: float) -> None:
    if data.ndim != 3:
        raise ValueError(f"expected a 3D array, got shape {data.shape}")
    if not spacing > 0:
        raise ValueError(f"voxel spacing must be positive, got {spacing}")


@dataclass(frozen=True)
class ScalarVolume:
    """16-bit grayscale volume; ``data[z, y, x]``, spacing in micrometers."""

    data: np.ndarray
    spacing: float

    def __post_init__(self):
        _check_3d(self.data, self.spacing)
        object.__setattr__(self, "data", _own(self.data, np.uint16))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)


@dataclass(frozen=True)
class BinaryVolume:
    """Foreground mask; boolean ``data[z, y, x]``."""

    data: np.ndarray
    spacing: float

    def __post_init__(self):
        _check_3d(self.data, self.spacing)
        object.__setattr__(self, "data", _own(self.data, bool))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)


@dataclass(frozen=True)
class LabelVolume:
    """Particle labeling; int32 ``data[z, y, x]``, 0 = background.

    The positive label set must be contiguous 1..L with every label occupying
    at least one voxel.
    """

    data: np.ndarray
    spacing: float

    def __post_init__(self):
        _check_3d(self.data, self.spacing)
        arr = np.ascontiguousarray(self.data, dtype=np.int32)
        if arr.size and arr.min() < 0:
            raise ValueError("labels must be non-negative")
        top = int(arr.max()) if arr.size else 0
        if top > 0:
            counts = np.bincount(arr.ravel(), minlength=top + 1)
            if not counts[1:].all():
                missing = int(np.flatnonzero(counts[1:] == 0)[0]) + 1
                raise ValueError(f"label set is not contiguous: label {missing} is empty")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def n_labels(self) -> int:
        return int(self.data.max()) if self.data.size else 0


@dataclass(frozen=True)
class LabelPlane:
    """2D mineral-code image; uint8 ``data[y, x]``, 0 = background."""

    data: np.ndarray
    spacing: float

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"expected a 2D array, got shape {self.data.shape}")
        if not self.spacing > 0:
            raise ValueError(f"pixel spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "data", _own(self.data, np.uint8))

    @property
    def dims(self) -> tuple[int, int]:
        ny, nx = self.data.shape
        return (nx, ny)

    def codes(self) -> np.ndarray:
        """Sorted nonzero codes present in the plane."""
        u = np.unique(self.data)
        return u[u > 0]


Volume = ScalarVolume | BinaryVolume | LabelVolume


def _payload_size(dims: tuple[int, int, int], element: str) -> int:
    nx, ny, nz = dims
    n = nx * ny * nz
    if element == "bit":
        return (n + 7) // 8
    return n * ELEMENT_DTYPES[element].itemsize


def read_volume(path, dims: tuple[int, int, int], spacing: float, element: str):
    """Read a raw little-endian payload into the matching container.

    u16 -> ScalarVolume, u32 -> LabelVolume, bit -> BinaryVolume. u8 payloads
    carry label planes and require nz == 1 (returns a LabelPlane).
    """
    nx, ny, nz = dims
    if element not in VALID_ELEMENTS:
        raise ValueError(f"unknown element type {element!r}")
    if nx <= 0 or ny <= 0 or nz <= 0:
        raise ValueError(f"dims must be positive, got {dims}")
    expected = _payload_size(dims, element)
    actual = os.path.getsize(path)
    if actual != expected:
        raise ValueError(
            f"{path}: file holds {actual} bytes but dims {dims} as {element} need {expected}"
        )
    raw = np.fromfile(path, dtype=np.uint8)
    if element == "bit":
        bits = np.unpackbits(raw, count=nx * ny * nz, bitorder="little")
        return BinaryVolume(bits.reshape(nz, ny, nx).astype(bool), spacing)
    arr = raw.view(ELEMENT_DTYPES[element]).reshape(nz, ny, nx)
    if element == "u16":
        return ScalarVolume(arr, spacing)
    if element == "u32":
        return LabelVolume(arr, spacing)
    if nz != 1:
        raise ValueError("u8 payloads are only supported as single-slice label planes")
    return LabelPlane(arr[0], spacing)


def _element_of(vol) -> str:
    if isinstance(vol, ScalarVolume):
        return "u16"
    if isinstance(vol, BinaryVolume):
        return "bit"
    if isinstance(vol, LabelVolume):
        return "u32"
    if isinstance(vol, LabelPlane):
        return "u8"
    raise TypeError(f"not a grid container: {type(vol)!r}")


def write_volume(vol, path) -> None:
    """Write raw payload plus ``<path>.meta`` sidecar."""
    element = _element_of(vol)
    if isinstance(vol, LabelPlane):
        dims = (vol.dims[0], vol.dims[1], 1)
        flat = vol.data.ravel()
    else:
        dims = vol.dims
        flat = vol.data.ravel()
    if element == "bit":
        payload = np.packbits(flat.astype(np.uint8), bitorder="little")
    else:
        payload = flat.astype(ELEMENT_DTYPES[element])
    payload.tofile(path)
    with open(f"{path}.meta", "w", encoding="utf-8") as fh:
        fh.write(f"dims={dims[0]},{dims[1]},{dims[2]}\n")
        fh.write(f"spacing_um={vol.spacing!r}\n")
        fh.write(f"element={element}\n")


def read_sidecar(path) -> dict:
    meta = {}
    with open(f"{path}.meta", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or "=" not in line:
                continue
            key, val = line.split("=", 1)
            meta[key.strip()] = val.strip()
    for key in ("dims", "spacing_um", "element"):
        if key not in meta:
            raise ValueError(f"{path}.meta: missing key {key!r}")
    return meta


def load_volume(path):
    """Read a payload using its sidecar metadata."""
    meta = read_sidecar(path)
    dims = tuple(int(v) for v in meta["dims"].split(","))
    if len(dims) != 3:
        raise ValueError(f"{path}.meta: dims must have three entries")
    return read_volume(path, dims, float(meta["spacing_um"]), meta["element"])


_AXIS_INDEX = {"x": 2, "y": 1, "z": 0}


def extract_slice(vol, axis: str, index: int) -> np.ndarray:
    """Planar slice of a volume as a 2D array of the same element type.

    Slice along z gives ``[y, x]``, along y gives ``[z, x]``, along x gives
    ``[z, y]``.
    """
    if axis not in _AXIS_INDEX:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    ax = _AXIS_INDEX[axis]
    n = vol.data.shape[ax]
    if not 0 <= index < n:
        raise IndexError(f"slice index {index} out of range for axis {axis} of size {n}")
    return np.take(vol.data, index, axis=ax).copy()
