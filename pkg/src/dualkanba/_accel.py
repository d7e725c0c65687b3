"""Numba switch.

Kernels are compiled with numba when it is importable and the environment
variable ``DUALKANBA_NUMBA`` is not set to ``0``.  Otherwise the pure numpy
implementations in :mod:`dualkanba.kernels` are used.
"""

import os

ENV_FLAG = "DUALKANBA_NUMBA"

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False
    _njit = None

USE_NUMBA = HAVE_NUMBA and os.environ.get(ENV_FLAG, "1").strip().lower() not in ("0", "false", "no", "off")


def njit(fn):
    """Compile ``fn`` in nopython mode with on-disk caching, or return it unchanged."""
    if not HAVE_NUMBA:
        return fn
    return _njit(cache=True, nogil=True)(fn)
