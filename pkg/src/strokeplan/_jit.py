"""Selects between numba-compiled kernels and their pure-numpy twins.

Set ``STROKEPLAN_DISABLE_JIT=1`` to force the numpy path (handy for debugging
and for machines without a working LLVM).
"""

import os

_FALSY = {"", "0", "false", "no", "off"}

JIT_REQUESTED = os.environ.get("STROKEPLAN_DISABLE_JIT", "").strip().lower() in _FALSY

try:
    import numba as nb

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    NUMBA_AVAILABLE = False

USE_NUMBA = JIT_REQUESTED and NUMBA_AVAILABLE


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise."""
    if NUMBA_AVAILABLE:
        kwargs.setdefault("cache", True)
        return nb.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func
