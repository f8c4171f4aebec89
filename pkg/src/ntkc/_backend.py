"""Numba backend selection.

Hot entrywise kernels are compiled with numba unless NTKC_DISABLE_NUMBA is set
to a truthy value, in which case vectorized numpy fallbacks run instead.  Both
paths compute identical quantities; benchmarks/bench_backends.py compares them.
"""

import os


def numba_disabled() -> bool:
    return os.environ.get("NTKC_DISABLE_NUMBA", "").strip().lower() not in (
        "",
        "0",
        "false",
    )


USE_NUMBA = False
if not numba_disabled():
    try:
        import numba  # noqa: F401

        USE_NUMBA = True
    except ImportError:
        USE_NUMBA = False
