"""
Batch Prefetcher
Builds the next steps' batches on a helper thread while the rank computes
"""

from typing import Callable, Iterable, Optional

import logging
import queue
import threading

from ..utils.errors import ContractViolation

logger = logging.getLogger(__name__)

PREFETCH_SLOTS = 2
_POLL_SECONDS = 0.05


class Prefetcher:
    """
    Producer thread feeding a two-slot buffer in step order

    Batch construction needs no communication, so the producer holds no
    compute slot. The builder must be deterministic in its step argument;
    batches are then identical to building them inline.

    Args:
        build: Callable producing the batch for one global step
        steps: Global steps to build, in the order they will be consumed
        name: Thread name prefix (the owning rank)
        timeout: Seconds ``get`` waits before giving up
    """

    def __init__(self, build: Callable, steps: Iterable[int], name: str = "rank", timeout: float = 120.0):
        self._build = build
        self._steps = list(steps)
        self._timeout = timeout
        self._buffer: queue.Queue = queue.Queue(maxsize=PREFETCH_SLOTS)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name=f"{name}-prefetch", daemon=True)
        self._thread.start()

    def _run(self) -> None:
        for step in self._steps:
            if self._stop.is_set():
                return
            try:
                item = (step, self._build(step), None)
            except BaseException as exc:
                item = (step, None, exc)
            while not self._stop.is_set():
                try:
                    self._buffer.put(item, timeout=_POLL_SECONDS)
                    break
                except queue.Full:
                    continue
            if item[2] is not None:
                return

    def get(self, step: int):
        """Block until the batch for ``step`` is ready; the producer's errors surface here"""
        try:
            built_step, batch, error = self._buffer.get(timeout=self._timeout)
        except queue.Empty:
            raise ContractViolation(f"prefetched batch for step {step} not ready after {self._timeout:.0f}s")
        if error is not None:
            raise error
        if built_step != step:
            raise ContractViolation(f"prefetch order broken: expected step {step}, got {built_step}")
        return batch

    def close(self, wait: Optional[float] = 5.0) -> None:
        self._stop.set()
        self._thread.join(wait)
