"""
Replica worker pool

Replica work is pure given its stream, so the pool only has to keep results in
submission order. ThreadPoolExecutor.map does exactly that; reductions happen
afterwards, in the caller, in a fixed order.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from .config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class ReplicaPool:
    """
    Order-preserving map over replicas

    Example:
        >>> with ReplicaPool(threads=4) as pool:
        ...     values = pool.map(run_replica, range(200))
    """

    def __init__(self, threads: Optional[int] = None):
        self.threads = max(1, int(threads if threads is not None else settings.threads))
        self._executor: Optional[ThreadPoolExecutor] = None

    def __enter__(self) -> "ReplicaPool":
        if self.threads > 1:
            self._executor = ThreadPoolExecutor(
                max_workers=self.threads, thread_name_prefix="shotperc"
            )
            logger.debug(f"ReplicaPool started with {self.threads} threads")
        return self

    def __exit__(self, *exc) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """Apply fn to every item; results come back in item order"""
        if self._executor is None:
            return [fn(item) for item in items]
        return list(self._executor.map(fn, items))


def replica_map(fn: Callable[[int], R], n_reps: int, pool: Optional[ReplicaPool] = None) -> List[R]:
    """Run fn(replica) for replica = 0..n_reps-1, using pool when given"""
    if pool is None:
        return [fn(i) for i in range(n_reps)]
    return pool.map(fn, range(n_reps))
