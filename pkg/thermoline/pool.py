import os
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor

import numpy as np

_threads: int | None = None


def get_thread_count() -> int:
    if _threads:
        return _threads
    return max(1, int(os.getenv("THERMOLINE_THREADS", "1")))


def set_thread_count(threads: int | None) -> None:
    global _threads
    _threads = threads


def map_ordered[T, R](
    fn: Callable[[T], R], items: Iterable[T], threads: int | None = None
) -> list[R]:
    """Map over `items` on a thread pool, results in input order whatever the scheduling."""
    threads = threads or get_thread_count()
    if threads == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def derive_seed(master_seed: int, *key: int) -> int:
    """
    Seed of an independent stream for task `key` of a run seeded with `master_seed`.
    Don't change the derivation once released or it'll change every recorded run.
    """
    seq = np.random.SeedSequence(master_seed, spawn_key=key)
    return int(seq.generate_state(1, np.uint64)[0])
