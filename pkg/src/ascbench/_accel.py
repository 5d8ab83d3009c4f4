"""Numba switch.

Hot kernels are written twice: an explicit-loop version compiled with
``numba.njit`` and a vectorised numpy twin. Setting ``ASCBENCH_DISABLE_NUMBA=1``
(or running without numba installed) routes every dispatch to the numpy twin.
The flag is read once, at import time.
"""

import os

_FLAG = "ASCBENCH_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


def njit(func):
    """Compile ``func`` in nopython mode when numba is importable.

    Compilation happens even when the flag disables numba dispatch, so the
    benchmark and the equivalence tests can still reach the loop kernels.
    """
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
