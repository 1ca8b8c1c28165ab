"""Deterministic parallel map.

Results are always returned in input order and every task is a pure function
of its arguments, so output never depends on the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)


def pmap(fn, items, workers=1, chunksize=None) -> list:
    """``[fn(x) for x in items]``, optionally spread over worker processes.

    ``fn`` and the items must be picklable when ``workers > 1``.
    """
    items = list(items)
    if workers is None:
        workers = default_workers()
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    if chunksize is None:
        chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunksize))
