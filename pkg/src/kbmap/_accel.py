"""JIT switch for the hot kernels.

Kernels are written once in the numba-compatible subset of Python. When numba
is importable and ``KBMAP_DISABLE_JIT`` is unset, they are compiled with
``njit``; otherwise the plain-Python/numpy function is used as-is. The flag is
read once at import time.
"""

import os
import warnings

DISABLE_ENV = "KBMAP_DISABLE_JIT"

try:
    import numba
    from numba import prange
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    prange = range


def _jit_requested():
    return os.environ.get(DISABLE_ENV, "").strip().lower() not in ("1", "true", "yes", "on")


HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _jit_requested()

if HAVE_NUMBA:
    # The bundled TBB is too old on some hosts; workqueue is always available.
    numba.config.THREADING_LAYER = "workqueue"


def njit(func=None, *, parallel=False):
    """Compile ``func`` with numba when enabled; identity otherwise."""

    def wrap(f):
        if not USE_NUMBA:
            return f
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return numba.njit(cache=True, parallel=parallel, nogil=True)(f)

    if func is None:
        return wrap
    return wrap(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
