"""Deterministic parallel map and per-task random streams.

Work items are evaluated by a thread pool but results always come back in item
order, and every task draws its randomness from a stream derived from the run
seed and the task index only. Outputs therefore do not depend on the worker
count.
"""

from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

import numpy as np
from loguru import logger

# No typing imports needed here due to Python 3.10+ syntax

T = TypeVar("T")
R = TypeVar("R")


class ParallelMap:
    """Ordered map over a fixed-size worker pool."""

    def __init__(self, workers: int = 1):
        """Initialize the map.

        Args:
            workers: Number of worker threads; 1 runs serially in the caller
        """
        if workers < 1:
            raise ValueError("workers must be at least 1")
        self.workers = workers

    def __call__(self, func: Callable[[T], R], items: Iterable[T]) -> list[R]:
        """Apply func to every item, returning results in item order."""
        items = list(items)
        if self.workers == 1 or len(items) <= 1:
            return [func(item) for item in items]
        logger.debug(f"Mapping {len(items)} tasks over {self.workers} workers")
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(func, items))


SERIAL = ParallelMap(1)


def task_rng(seed: int, index: int) -> np.random.Generator:
    """Random generator for task ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
