"""Optional numba acceleration for the scalar special-function kernels.

Kernels are written as plain Python with explicit loops so the same source
runs either JIT-compiled or interpreted.  Setting the environment variable
``ANNODIST_NO_NUMBA=1`` (or ``true``/``yes``) before import selects the pure
NumPy/Python fallback; a missing numba install falls back silently.  See
``benchmarks/bench_special.py`` for a comparison of the two paths.
"""

import os

_FALSEY = {"", "0", "false", "no"}


def _env_disabled() -> bool:
    return os.environ.get("ANNODIST_NO_NUMBA", "").strip().lower() not in _FALSEY


try:
    if _env_disabled():
        raise ImportError("numba disabled via ANNODIST_NO_NUMBA")
    from numba import njit as _numba_njit

    NUMBA_ENABLED = True
except ImportError:
    _numba_njit = None
    NUMBA_ENABLED = False


def njit(*args, **kwargs):
    """``numba.njit`` when acceleration is active, identity decorator otherwise."""
    if not NUMBA_ENABLED:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return _numba_njit(*args, **kwargs)
