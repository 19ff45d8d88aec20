"""Backend selection for the hot kernels.

Kernels are compiled with numba when it is importable and the environment
variable ``ERGOMEASURE_DISABLE_NUMBA`` is unset (or ``0``). Otherwise the
pure-numpy implementations are used.
"""

from __future__ import annotations

import os

_FLAG = "ERGOMEASURE_DISABLE_NUMBA"

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None


def numba_available() -> bool:
    return _numba is not None


def use_numba() -> bool:
    """Return True when the compiled backend should be used."""
    if _numba is None:
        return False
    return os.environ.get(_FLAG, "0").strip().lower() in ("", "0", "false", "no")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    The compiled object is created lazily by numba on first call, so
    decorating a function has no cost when the numpy backend is selected.
    """
    if _numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return _numba.njit(*args, **kwargs)


def set_threads(k: int) -> int:
    """Cap the number of worker threads used by compiled kernels."""
    k = max(1, int(k))
    os.environ["OMP_NUM_THREADS"] = str(k)
    if _numba is not None:
        k = min(k, _numba.config.NUMBA_NUM_THREADS)
        _numba.set_num_threads(k)
    return k
