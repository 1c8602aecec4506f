"""Small internal helpers: seeded RNG streams and order-preserving parallel map."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def rng_for(seed, *key):
    """Independent generator for (seed, *key); stable across call order."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in key]])


def parallel_map(fn, items, workers=1):
    """Map fn over items, preserving input order in the result list.

    workers <= 1 runs sequentially. Results are identical either way; the
    thread pool only matters for wall-clock time on numpy-heavy work.
    """
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
