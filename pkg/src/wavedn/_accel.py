"""numba switch. Set WAVEDN_DISABLE_NUMBA=1 to run the pure numpy kernels."""
import os

_flag = os.environ.get("WAVEDN_DISABLE_NUMBA", "").strip().lower()
DISABLED = _flag not in ("", "0", "false", "no")

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(*args, **kwargs):
    """numba.njit when available, identity otherwise.

    The jitted variant is compiled even when the numpy path is active so the
    two can be compared in tests; only dispatch depends on the env flag.
    """
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def backend():
    return "numba" if USE_NUMBA else "numpy"
