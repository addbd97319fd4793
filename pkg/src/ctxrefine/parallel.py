"""Order-preserving parallel map.

Work items carry their own random streams (see ``seeding``), so the
result never depends on the number of workers.
"""
import os
from concurrent.futures import ProcessPoolExecutor


def default_workers():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def pmap(fn, items, workers=1, chunksize=None):
    items = list(items)
    if workers is None:
        workers = default_workers()
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    if chunksize is None:
        chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
