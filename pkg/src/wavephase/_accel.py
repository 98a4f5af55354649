"""Numba switch.

Kernels are written twice: a loop form compiled with ``numba.njit`` and a
vectorised numpy form. ``WAVEPHASE_NUMBA=0`` (or numba missing) selects the
numpy form everywhere. Both forms must agree to roundoff.
"""

import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    numba = None
    HAS_NUMBA = False


def _flag_enabled():
    value = os.environ.get("WAVEPHASE_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "no", "off", "")


USE_NUMBA = HAS_NUMBA and _flag_enabled()


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when numba is importable, else identity."""
    kwargs.setdefault("cache", True)

    def wrap(fn):
        if not HAS_NUMBA:
            return fn
        return numba.njit(**kwargs)(fn)

    if len(args) == 1 and callable(args[0]):
        return wrap(args[0])
    return wrap


def backend():
    return "numba" if USE_NUMBA else "numpy"
