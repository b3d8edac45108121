"""Kernel backend selection.

The hot elementwise kernels (gelu, softmax, rmsnorm, rope, adam) exist in two
implementations: numba @njit and pure numpy. The active one is chosen once at
import time from the SPARSEGUIDE_BACKEND environment variable:

    SPARSEGUIDE_BACKEND=numba   force numba (error if unavailable)
    SPARSEGUIDE_BACKEND=numpy   force the pure-numpy path
    unset                       numba if importable, else numpy

Matrix multiplies always go through numpy/BLAS; only elementwise-heavy
kernels are dispatched. ``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

_requested = os.environ.get("SPARSEGUIDE_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise ValueError(
        f"SPARSEGUIDE_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    HAVE_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise
        HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return BACKEND
