import os
from concurrent.futures import ThreadPoolExecutor
from typing import *


THREADS_ENV_NAME = "QFAL_THREADS"


def _env_threads() -> Optional[int]:
    value = os.environ.get(THREADS_ENV_NAME)
    if not value:
        return None
    try:
        return max(1, int(value))
    except ValueError:
        print(f"ignore invalid {THREADS_ENV_NAME}={value} / {THREADS_ENV_NAME} の値が不正なため無視します")
        return None


def get_num_threads(requested: Optional[int] = None) -> int:
    # QFAL_THREADS caps the thread count, also an explicit one
    cap = _env_threads()
    if requested is not None and requested > 0:
        return int(requested) if cap is None else min(int(requested), cap)
    return 1 if cap is None else cap


def map_in_threads(fn: Callable, items: Sequence, num_threads: int = 1) -> List:
    """Apply fn to every item. Results are always returned in input order, so callers can reduce them deterministically."""
    if num_threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    with ThreadPoolExecutor(max_workers=min(num_threads, len(items))) as executor:
        futures = [executor.submit(fn, item) for item in items]
        # result() re-raises the worker's exception in the caller thread
        return [future.result() for future in futures]
