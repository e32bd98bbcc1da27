"""Numba switch for the hot kernels.

Every kernel module defines a ``*_numba`` variant compiled with :func:`njit`
and a ``*_numpy`` variant. ``USE_NUMBA`` picks between them at import time.
Set ``ODFORGE_NUMBA=0`` to force the pure-numpy path (useful for debugging,
or on platforms without an LLVM toolchain).
"""

import os

_flag = os.environ.get("ODFORGE_NUMBA", "1").strip().lower()

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _flag not in {"0", "false", "no", "off"}


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise the identity decorator.

    Compiled lazily, so importing the package never pays compilation cost.
    """
    if HAS_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
