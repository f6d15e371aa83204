"""Deterministic chunked replication over independent random streams.

Work of ``n_items`` replicates is cut into fixed-size chunks; chunk ``c``
always runs on ``RandomStream(seed, c)``.  The chunk size never depends on
the number of workers and results are returned in chunk order, so any
reduction over them is identical for every worker count.
"""

from __future__ import annotations

import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .dists import RandomStream

DEFAULT_CHUNK = 10_000


def chunk_layout(n_items: int, chunk_size: int = DEFAULT_CHUNK) -> list[tuple[int, int]]:
    """(chunk_id, count) pairs covering ``n_items``."""
    if n_items < 0 or chunk_size < 1:
        raise ValueError("need n_items >= 0 and chunk_size >= 1")
    full, rest = divmod(n_items, chunk_size)
    out = [(c, chunk_size) for c in range(full)]
    if rest:
        out.append((full, rest))
    return out


def _run_chunk(func, seed, stream_offset, item):
    cid, count = item
    return func(RandomStream(seed, stream_offset + cid), count)


# the job is handed to forked workers through this global, so closures and
# lambdas work without pickling
_JOB = None


def _call_job(item):
    return _JOB(item)


def map_chunks(func: Callable, n_items: int, seed: int, workers: int = 1,
               chunk_size: int = DEFAULT_CHUNK, stream_offset: int = 0) -> list:
    """Evaluate ``func(rng, count)`` on every chunk, in chunk order.

    Workers are forked, so ``func`` is inherited rather than pickled; only
    the per-chunk results travel back to the parent.
    """
    global _JOB
    layout = chunk_layout(n_items, chunk_size)
    job = partial(_run_chunk, func, seed, stream_offset)
    if workers <= 1 or len(layout) <= 1:
        return [job(item) for item in layout]
    ctx = multiprocessing.get_context("fork")
    _JOB = job
    try:
        with ProcessPoolExecutor(max_workers=min(workers, len(layout)), mp_context=ctx) as pool:
            return list(pool.map(_call_job, layout))
    finally:
        _JOB = None


def concat(parts: Sequence, key: str | None = None) -> np.ndarray:
    """Concatenate per-chunk arrays (or a named attribute of per-chunk records)."""
    if key is not None:
        parts = [getattr(p, key) if not isinstance(p, dict) else p[key] for p in parts]
    return np.concatenate([np.asarray(p) for p in parts])
