"""Numba shim.

Kernels are written in the numba-compatible subset of Python and decorated with
:func:`njit`.  Setting ``LSTS_DISABLE_NUMBA=1`` (or running without numba
installed) turns the decorator into a no-op so the same functions execute as
plain Python over numpy arrays.
"""
import os
import warnings

_disabled = os.environ.get("LSTS_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _numba_njit

    USING_NUMBA = True
except ImportError:
    if not _disabled:
        warnings.warn("numba is not installed - kernels run as plain Python")
    USING_NUMBA = False
    _numba_njit = None


def njit(*args, **kw):
    if USING_NUMBA:
        return _numba_njit(*args, cache=True, **kw)
    if len(args) == 1 and callable(args[0]) and not kw:
        return args[0]
    return lambda f: f


def py_func(f):
    """Return the undecorated Python implementation of a kernel."""
    return getattr(f, "py_func", f)
