"""Numba acceleration toggle.

Hot kernels in :mod:`cassirecon.kernels` come in two flavours: a numba
``@njit`` build and a pure-numpy fallback.  The fallback is selected when
numba is not importable or when ``CASSIRECON_NO_NUMBA=1`` is set in the
environment (read once at import time).  Both paths compute identical
results; ``benchmarks/bench_kernels.py`` compares their throughput.
"""

import os

NUMBA_ENV_FLAG = "CASSIRECON_NO_NUMBA"

_disabled = os.environ.get(NUMBA_ENV_FLAG, "0") == "1"

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    njit = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _disabled
