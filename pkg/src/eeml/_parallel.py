import os
from concurrent.futures import ThreadPoolExecutor


def n_workers() -> int:
    raw = os.environ.get("EEML_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def ordered_map(fn, items):
    """``list(map(fn, items))``, fanned out over ``EEML_THREADS`` threads.

    Results always come back in input order so reductions stay reproducible.
    """
    items = list(items)
    workers = min(n_workers(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
