"""Order-preserving map over a process pool."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def deterministic_mode() -> bool:
    return os.environ.get("PIMFORGE_DETERMINISTIC", "") == "1"


def ordered_map(fn, items, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally over ``workers`` processes.

    Results come back in input order, so reductions over them are fixed
    regardless of the worker count.
    """
    items = list(items)
    if workers <= 1 or deterministic_mode() or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))
