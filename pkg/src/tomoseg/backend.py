"""Kernel backend selection.

Every hot voxel kernel ships in two implementations: a numba @njit version
and a pure numpy (or scipy-backed) fallback. The environment variable
TOMOSEG_BACKEND forces one of "numba" or "numpy"; when unset, numba is used
if it imports. ``benchmarks/bench_kernels.py`` compares the two paths.
"""

from __future__ import annotations

import os

try:
    from numba import njit  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


ENV_VAR = "TOMOSEG_BACKEND"


def selected() -> str:
    """Return the active backend name, "numba" or "numpy"."""
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError(f"{ENV_VAR}=numba but numba is not importable")
        return "numba"
    if choice == "numpy":
        return "numpy"
    if choice:
        raise ValueError(f"unknown {ENV_VAR} value {choice!r}; use 'numba' or 'numpy'")
    return "numba" if HAVE_NUMBA else "numpy"


def use_numba() -> bool:
    return selected() == "numba"
