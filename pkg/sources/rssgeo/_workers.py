r"""
Worker pool for independent Monte Carlo trials and map cells.

Results are always returned in input order, so aggregates do not depend on the
number of workers.
"""

import logging
import os
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import Final

__all__ = ["THREADS_ENV", "worker_count", "ordered_map"]

logger = logging.getLogger(__name__)

THREADS_ENV: Final = "RSSGEO_THREADS"


def worker_count(requested: int | None = None) -> int:
    r"""
    Number of workers to use, capped by the ``RSSGEO_THREADS`` environment variable.
    """
    count = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            count = min(count, int(cap))
        except ValueError:
            logger.warning("Ignoring %s=%r (not an integer)", THREADS_ENV, cap)
    return max(1, count)


def ordered_map[T, R](
    fn: Callable[[T], R], items: Iterable[T], *, workers: int | None = None
) -> list[R]:
    items = list(items)
    count = min(worker_count(workers), max(1, len(items)))
    if count == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=count) as pool:
        return list(pool.map(fn, items))
