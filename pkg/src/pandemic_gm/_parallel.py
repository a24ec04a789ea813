import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "PANDEMIC_GM_WORKERS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def ordered_map(fn, items, workers: int | None = None, chunksize: int = 16) -> list:
    """``list(map(fn, items))``, optionally across processes; order is preserved."""
    items = list(items)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunksize))
