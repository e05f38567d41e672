"""Optional numba acceleration.

Set ``COMMDP_DISABLE_JIT=1`` before import to force the pure-numpy kernels.
"""

import os

_DISABLED = os.environ.get("COMMDP_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _njit = None
    HAS_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAS_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


BACKEND = "numba" if HAS_NUMBA else "numpy"
