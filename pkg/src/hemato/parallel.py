"""Seed streams and the replicate thread pool.

The compiled kernels release the GIL, so replicates run concurrently in
threads. Each replicate reseeds its own generator, and results are gathered
in replicate order, so output never depends on the number of workers.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def replicate_seeds(seed, n: int) -> np.ndarray:
    """``n`` 32-bit seeds derived from ``seed``; the first one does not depend on n."""
    return np.random.SeedSequence(int(seed)).generate_state(n, dtype=np.uint32).astype(np.int64)


def default_threads() -> int:
    env = os.environ.get("HEMATO_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def map_replicates(fn, items, threads: int | None = None) -> list:
    items = list(items)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
