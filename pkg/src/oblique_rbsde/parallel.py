from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "OBLIQUE_RBSDE_THREADS"


def worker_count() -> int:
    """Worker cap from ``OBLIQUE_RBSDE_THREADS``; 0 or unset means one per CPU."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError(f"{THREADS_ENV} must be >= 0")
    return n or (os.cpu_count() or 1)


def ordered_map(func, items):
    """``list(map(func, items))`` spread over the worker pool, results in input order."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
