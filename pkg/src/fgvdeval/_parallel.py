"""Deterministic chunked parallelism.

Work is split into fixed-size chunks regardless of the worker count, so the
arithmetic performed (and therefore every output byte) is identical whether
one thread or many process the chunks. FGVD_EVAL_THREADS caps the worker
count; 0 means one worker per CPU.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

CHUNK_SIZE = 256

T = TypeVar("T")
R = TypeVar("R")


def worker_count(requested: int | None = None) -> int:
    """Resolve a worker count from the argument or FGVD_EVAL_THREADS (0 = auto)."""
    if requested is None:
        raw = os.environ.get("FGVD_EVAL_THREADS", "")
        if raw.strip() == "":
            return 1
        try:
            requested = int(raw)
        except ValueError:
            raise ValueError(f"FGVD_EVAL_THREADS must be an integer, got {raw!r}")
    if requested < 0:
        raise ValueError("worker count must be >= 0")
    if requested == 0:
        return os.cpu_count() or 1
    return requested


def map_chunks(func: Callable[[Sequence[T]], R], items: Sequence[T],
               workers: int | None = None) -> list[R]:
    """Apply func to fixed-size chunks of items, results in chunk order."""
    chunks = [items[i:i + CHUNK_SIZE] for i in range(0, len(items), CHUNK_SIZE)]
    n_workers = worker_count(workers)
    if n_workers <= 1 or len(chunks) <= 1:
        return [func(chunk) for chunk in chunks]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(func, chunks))
