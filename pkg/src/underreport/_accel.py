"""Numba switch for the hot kernels.

Set ``UNDERREPORT_NUMBA=0`` in the environment to force the pure-numpy
fallback. Numba is used by default when it can be imported.
"""
import os

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False


def _flag_enabled():
    value = os.environ.get("UNDERREPORT_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "no", "off")


USE_NUMBA = HAS_NUMBA and _flag_enabled()


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if HAS_NUMBA:
        return numba.njit(cache=True)(func)
    return func
