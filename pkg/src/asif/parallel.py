"""Order-preserving worker pool.

Work items carry their own derived random streams, so results are
identical for any worker count; the pool only changes wall-clock time.
"""

from __future__ import annotations

import multiprocessing
from typing import Callable, Sequence


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Map ``fn`` over ``items`` preserving order, optionally in processes.

    ``fn`` and the items must be picklable when ``workers > 1``.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with multiprocessing.Pool(processes=min(workers, len(items))) as pool:
        return pool.map(fn, items)
