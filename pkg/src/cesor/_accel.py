"""Backend selection for the hot kernels.

Kernels are written once as plain loops and compiled with numba when it is
available.  Setting ``CESOR_NUMBA=0`` before import skips compilation
altogether and routes every dispatcher to the numpy path.  Switching with
:func:`set_backend` at runtime changes the dispatchers only: loops that have
no vectorized twin keep calling their compiled helpers.
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    numba = None
    HAVE_NUMBA = False

_FALSY = {"0", "false", "no", "off"}

_COMPILE = HAVE_NUMBA and os.environ.get("CESOR_NUMBA", "1").lower() not in _FALSY
_backend = "numba" if _COMPILE else "numpy"


def jit(fn):
    """Compile ``fn`` with numba (nopython, nogil, cached) if possible.

    The original Python function stays reachable as ``.py_func`` either way,
    so the numpy backend can call the uncompiled loop.
    """
    if not _COMPILE:
        fn.py_func = fn
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend():
    return _backend


def set_backend(name):
    """Switch between ``"numba"`` and ``"numpy"``; returns the previous value."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _COMPILE:
        raise RuntimeError("kernels were not compiled (numba missing or CESOR_NUMBA=0 at import)")
    prev, _backend = _backend, name
    return prev


def use_numba():
    return _backend == "numba"
