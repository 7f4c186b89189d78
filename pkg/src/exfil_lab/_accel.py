"""Numba switch.

Set ``EXFIL_LAB_NUMBA=0`` to force the pure-numpy kernels. When numba is not
importable the numpy path is used regardless.
"""
import os

try:
    import numba
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrapper(func):
            return func

        return wrapper


USE_NUMBA = HAS_NUMBA and os.environ.get("EXFIL_LAB_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)


def backend():
    return "numba" if USE_NUMBA else "numpy"
