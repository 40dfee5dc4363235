"""Global worker cap shared by the data-parallel kernels."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "TERRACER_THREADS"

_threads = None
_pool = None


def get_num_threads() -> int:
    global _threads
    if _threads is None:
        try:
            _threads = max(1, int(os.environ.get(ENV_VAR, "1")))
        except ValueError:
            _threads = 1
    return _threads


def set_num_threads(n: int) -> None:
    global _threads, _pool
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = n
    if _pool is not None:
        _pool.shutdown(wait=True)
        _pool = None


def map_ordered(fn, items):
    """``list(map(fn, items))``, spread over the worker pool when allowed.

    Results come back in input order, so reductions over them stay
    deterministic regardless of scheduling.
    """
    global _pool
    items = list(items)
    n = get_num_threads()
    if n == 1 or len(items) < 2:
        return [fn(item) for item in items]
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=n)
    return list(_pool.map(fn, items))
