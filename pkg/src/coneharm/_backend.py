"""Numba/numpy backend selection for the hot kernels.

The environment variable CONEHARM_BACKEND selects the implementation:

    CONEHARM_BACKEND=numba   require numba (ImportError if missing)
    CONEHARM_BACKEND=numpy   pure-numpy fallback kernels
    unset                    numba when importable, numpy otherwise
"""

import os

_requested = os.environ.get("CONEHARM_BACKEND", "auto").strip().lower()

if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"CONEHARM_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

HAVE_NUMBA = False
if _requested in ("auto", "numba"):
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise

USE_NUMBA = HAVE_NUMBA and _requested in ("auto", "numba")


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
