"""Deterministic replica chunking, optionally spread over a process pool.

Replicas are split into fixed-size chunks regardless of the worker count,
and partial results are merged in chunk order, so any statistic assembled
from chunk partials is bit-identical whether it ran on one worker or many.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable

#: replicas per work unit; fixed so results never depend on parallelism
CHUNK = 1024


def chunk_spans(total: int, chunk: int = CHUNK) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk, total)) for lo in range(0, total, chunk)]


def map_chunks(fn: Callable, total: int, workers: int = 1, chunk: int = CHUNK) -> list:
    """Apply fn(lo, hi) to every chunk span; results come back in chunk order."""
    spans = chunk_spans(total, chunk)
    if workers <= 1 or len(spans) <= 1:
        return [fn(lo, hi) for lo, hi in spans]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_apply, [(fn, lo, hi) for lo, hi in spans]))


def _apply(task):
    fn, lo, hi = task
    return fn(lo, hi)
