"""Hot voxel kernels, each with a numba @njit path and a numpy fallback.

Public entry points dispatch on :mod:`tomoseg.backend`; the twin
implementations are exposed with ``_numba`` / ``_numpy`` suffixes so tests
and benchmarks can exercise both regardless of the active backend.
"""
