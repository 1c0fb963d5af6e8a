"""Switch between numba-compiled kernels and the plain numpy path.

Set ``RISKMT_DISABLE_NUMBA=1`` before import to run every kernel as ordinary
Python/numpy (slow, but handy for debugging and for cross-checking).
"""
import os

DISABLED = os.environ.get("RISKMT_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USING_NUMBA = numba is not None and not DISABLED


def jit(fn):
    if USING_NUMBA:
        return numba.njit(cache=True, fastmath=False)(fn)
    return fn
