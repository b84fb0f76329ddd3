"""Thread-count control for the numba kernels."""

from __future__ import annotations

import contextlib
import os
import warnings

# allow a few worker threads even on single-core hosts; must precede the numba import
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(4, os.cpu_count() or 1)))

import numba  # noqa: E402

# an old system TBB only makes numba fall back to another threading layer
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)


def max_threads() -> int:
    return numba.config.NUMBA_NUM_THREADS


@contextlib.contextmanager
def using_threads(threads: int | None):
    if threads is None:
        yield
        return
    prev = numba.get_num_threads()
    numba.set_num_threads(max(1, min(int(threads), max_threads())))
    try:
        yield
    finally:
        numba.set_num_threads(prev)
