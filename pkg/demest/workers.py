from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Iterator, TypeVar

from demest.config import THREADS_ENV_VAR

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def resolve_workers(workers: int | None = None) -> int:
    """Explicit count, else $DEMEST_THREADS, else the CPU count."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning("Ignoring non-integer %s=%r", THREADS_ENV_VAR, env)
    return os.cpu_count() or 1


def imap_ordered(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> Iterator[R]:
    """Apply fn to every item, yielding results in input order."""
    items = list(items)
    n = resolve_workers(workers)
    if n <= 1 or len(items) <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        yield from pool.map(fn, items)


def map_ordered(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    return list(imap_ordered(fn, items, workers))
