"""Backend selection for the numeric kernels.

Kernels ship twice: an explicit-loop version compiled with ``numba.njit`` and
a vectorised pure-numpy version.  ``LRDSTEREO_BACKEND=numpy`` (or a missing
numba install) selects the fallback for the whole process; ``use_backend``
switches temporarily, which is what the tests and the benchmark do.
"""

import contextlib
import os
import warnings

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None

_VALID = ("numba", "numpy")


def _initial_backend():
    requested = os.environ.get("LRDSTEREO_BACKEND", "numba").strip().lower()
    if requested not in _VALID:
        warnings.warn(f"unknown LRDSTEREO_BACKEND={requested!r}, using numpy")
        return "numpy"
    if requested == "numba" and numba is None:
        warnings.warn("numba not installed; kernels fall back to numpy")
        return "numpy"
    return requested


_backend = _initial_backend()


def get_backend():
    return _backend


def set_backend(name):
    global _backend
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and numba is None:
        raise RuntimeError("numba backend requested but numba is not installed")
    _backend = name


@contextlib.contextmanager
def use_backend(name):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def njit(fn):
    """Compile lazily with numba when it is importable, else return ``fn``."""
    if numba is None:
        return fn
    return numba.njit(cache=False, nogil=True)(fn)


def dispatch(loop_impl, numpy_impl):
    """Build a function that routes to the active backend at call time."""

    def run(*args):
        if _backend == "numba":
            return loop_impl(*args)
        return numpy_impl(*args)

    run.__name__ = numpy_impl.__name__.replace("_numpy", "")
    run.__doc__ = numpy_impl.__doc__
    run.loop_impl = loop_impl
    run.numpy_impl = numpy_impl
    return run
