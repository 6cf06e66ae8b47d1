"""JIT switch for the numeric kernels.

Kernels are written once in numba-compatible numpy.  Setting the environment
variable ``HDCQR_DISABLE_NUMBA=1`` (or running without numba installed) makes
:func:`kernel` a no-op so the same source runs as plain numpy.
"""

import os

_DISABLED = os.environ.get("HDCQR_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba
except ImportError:  # pragma: no cover - exercised via subprocess tests
    numba = None

USE_NUMBA = numba is not None


def kernel(fn):
    """Compile ``fn`` with ``numba.njit`` when acceleration is enabled."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
