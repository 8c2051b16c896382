"""
Rank Runtime
Launch one worker thread per virtual rank, join them and surface the first failure
"""

from typing import Callable, List, Optional, TypeVar

import logging
import threading

from ..utils.errors import CollectiveAbortedError
from .collectives import Communicator, RankComm

logger = logging.getLogger(__name__)

T = TypeVar("T")


def run_ranks(comm: Communicator, fn: Callable[[RankComm], T], join_timeout: Optional[float] = None) -> List[T]:
    """
    Run ``fn`` SPMD-style on every rank of the communicator's grid

    Each worker holds a compute slot while it runs, so at most GRIDGNN_THREADS
    ranks compute at once; slots are released while a rank waits in a collective.

    Returns:
        Per-rank results in rank order

    Raises:
        The first non-abort exception raised by any rank
    """
    size = comm.grid.size
    results: List[Optional[T]] = [None] * size
    failures = []
    lock = threading.Lock()

    def worker(rank: int) -> None:
        try:
            with comm.compute_slot():
                results[rank] = fn(comm.rank(rank))
        except BaseException as exc:
            with lock:
                failures.append((rank, exc))
            comm.abort(f"rank {rank} failed: {exc}")

    threads = [threading.Thread(target=worker, args=(rank,), name=f"rank-{rank}", daemon=True) for rank in range(size)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join(join_timeout)
    comm.close()

    if failures:
        primary = [f for f in failures if not isinstance(f[1], CollectiveAbortedError)] or failures
        rank, exc = min(primary, key=lambda f: f[0])
        logger.error(f"Rank {rank} failed: {exc}")
        raise exc
    return results
