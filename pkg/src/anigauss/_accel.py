"""Backend switch for the hot loops.

Numba is used when importable unless ``ANIGAUSS_NUMBA=0`` is set in the
environment, in which case the vectorised numpy implementations run instead.
Both paths are always importable so they can be compared side by side.
"""

import os

try:
    import numba

    if not os.environ.get("NUMBA_THREADING_LAYER"):
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

ENV_FLAG = "ANIGAUSS_NUMBA"


def numba_requested():
    return os.environ.get(ENV_FLAG, "1").strip().lower() not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and numba_requested()


def jit(**options):
    """``numba.njit`` when numba is installed, identity otherwise."""

    def wrap(func):
        if not HAVE_NUMBA:
            return func
        return numba.njit(**options)(func)

    return wrap


if HAVE_NUMBA:
    prange = numba.prange
else:  # pragma: no cover
    prange = range


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
