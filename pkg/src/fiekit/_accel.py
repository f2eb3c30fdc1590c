"""Numba switch.

Kernels in :mod:`fiekit.kernels` are written in the numba-compatible subset of
numpy. With ``FIEKIT_NUMBA=0`` in the environment they run as ordinary numpy
code; otherwise they are compiled with ``numba.njit``.
"""
import os

_FLAG = os.environ.get("FIEKIT_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("0", "false", "no", "off")

numba_options = {
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "error_model": "numpy",
}


def jit(fn):
    """Compile ``fn`` with numba when enabled, else return it untouched."""
    if not USE_NUMBA:
        return fn
    return numba.njit(**numba_options)(fn)


def python_version(fn):
    """Return the uncompiled function behind a possibly jitted kernel."""
    return getattr(fn, "py_func", fn)
