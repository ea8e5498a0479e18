"""Optional numba acceleration.

Hot kernels are written twice: a vectorised numpy version and a loop version
compiled with ``numba.njit``.  The compiled path is used when numba imports
and the environment variable ``TWOTIER_DISABLE_NUMBA`` is unset or falsy.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def numba_disabled_by_env():
    return os.environ.get("TWOTIER_DISABLE_NUMBA", "").strip().lower() not in _FALSY


USE_NUMBA = HAVE_NUMBA and not numba_disabled_by_env()


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def decorator(func):
        return func

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return decorator
