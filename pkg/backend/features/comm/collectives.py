"""
Simulated Collectives
Rendezvous all-reduce, all-gather and max-reduce over shared in-process state,
with fixed ascending-coordinate reduction order and byte accounting
"""

from concurrent.futures import Future, ThreadPoolExecutor
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Protocol, Sequence, Tuple

import logging
import threading
import time

import numpy as np

from ..utils.errors import CollectiveAbortedError, CollectiveTimeoutError, ContractViolation, InputError
from .bfloat16 import bf16_round
from .grid import PMM_AXES, DeviceGrid, Group, RankCoord
from .stats import PHASES, CommStats, StatsRecorder

logger = logging.getLogger(__name__)

PRECISIONS = ("fp32", "bf16comm")
DEFAULT_TIMEOUT = 120.0


class ProcessGroup(Protocol):
    """What sharded operators need from a group along one axis"""

    axis: str

    @property
    def size(self) -> int: ...

    @property
    def index(self) -> int: ...

    def all_reduce(self, buffer: np.ndarray, precision: str = "fp32") -> np.ndarray: ...

    def all_reduce_max(self, buffer: np.ndarray) -> np.ndarray: ...

    def all_reduce_async(self, buffer: np.ndarray, precision: str = "fp32") -> Future: ...

    def wait(self, future: Future) -> np.ndarray: ...

    def all_gather(self, shard: np.ndarray, axis: int = 0) -> np.ndarray: ...


def _check_precision(precision: str) -> None:
    if precision not in PRECISIONS:
        raise InputError(f"precision must be one of {PRECISIONS}, got {precision!r}")


def _same_shapes(parts: Sequence[np.ndarray]) -> None:
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise ContractViolation(f"collective buffers disagree in shape: {sorted(shapes)}")


def _ordered_sum(parts: Sequence[np.ndarray]) -> np.ndarray:
    _same_shapes(parts)
    total = parts[0].copy()
    for part in parts[1:]:
        total += part
    return total


def _ordered_max(parts: Sequence[np.ndarray]) -> np.ndarray:
    _same_shapes(parts)
    total = parts[0].copy()
    for part in parts[1:]:
        np.maximum(total, part, out=total)
    return total


def _completed(value) -> Future:
    future: Future = Future()
    future.set_result(value)
    return future


class _Rendezvous:
    """Contribution slots of one group; results are kept per generation until read"""

    def __init__(self, size: int):
        self.size = size
        self.generation = 0
        self.parts: List[Optional[np.ndarray]] = [None] * size
        self.arrived = 0
        self.results: Dict[int, list] = {}


class Communicator:
    """
    Shared state for every collective of one run

    Args:
        grid: The device grid
        timeout: Seconds a member may wait at a rendezvous
        threads: Maximum ranks computing at once (GRIDGNN_THREADS); None for no cap
        byte_factor: Multiplier applied to every charged byte count
    """

    def __init__(
        self,
        grid: DeviceGrid,
        timeout: Optional[float] = None,
        threads: Optional[int] = None,
        byte_factor: float = 1.0,
    ):
        self.grid = grid
        self.timeout = float(timeout) if timeout else DEFAULT_TIMEOUT
        self.recorder = StatsRecorder(byte_factor)
        self._cond = threading.Condition()
        self._rendezvous: Dict[Tuple[str, Tuple[int, ...]], _Rendezvous] = {}
        self._abort_reason: Optional[str] = None
        self._slots = threading.Semaphore(threads) if threads and threads < grid.size else None
        self._local = threading.local()
        self._ranks: Dict[int, "RankComm"] = {rank: RankComm(self, rank) for rank in range(grid.size)}
        logger.info(f"Communicator ready: grid {grid}, {grid.size} ranks, timeout {self.timeout:.0f}s")

    def rank(self, rank: int) -> "RankComm":
        if rank not in self._ranks:
            raise InputError(f"rank {rank} outside grid of {self.grid.size}")
        return self._ranks[rank]

    def stats(self) -> CommStats:
        """comm_stats: a snapshot of the cumulative counters"""
        return self.recorder.snapshot()

    def abort(self, reason: str) -> None:
        """Release every waiting member with CollectiveAbortedError"""
        with self._cond:
            if self._abort_reason is None:
                self._abort_reason = reason
                logger.warning(f"Aborting collectives: {reason}")
            self._cond.notify_all()

    def close(self) -> None:
        for rank_comm in self._ranks.values():
            rank_comm.shutdown()

    @contextmanager
    def compute_slot(self) -> Iterator[None]:
        """Hold one of the GRIDGNN_THREADS compute slots for the calling thread"""
        if self._slots is None:
            yield
            return
        self._slots.acquire()
        self._local.held = True
        try:
            yield
        finally:
            self._local.held = False
            self._slots.release()

    @contextmanager
    def waiting(self) -> Iterator[None]:
        """Give up the calling thread's compute slot, if it holds one, while it blocks"""
        held = getattr(self._local, "held", False)
        if held:
            self._slots.release()
        try:
            yield
        finally:
            if held:
                self._slots.acquire()

    def exchange(self, group: Group, index: int, payload: np.ndarray, combine: Callable) -> np.ndarray:
        """
        Contribute ``payload`` as member ``index`` and wait for the combined result

        The last member to arrive combines all contributions in member order.
        """
        key = (group.axis, group.members)
        with self._cond:
            self._raise_if_aborted()
            rv = self._rendezvous.setdefault(key, _Rendezvous(group.size))
            generation = rv.generation
            if rv.parts[index] is not None:
                raise ContractViolation(f"rank {group.members[index]} entered a {group.axis} collective twice")
            rv.parts[index] = payload
            rv.arrived += 1
            if rv.arrived == rv.size:
                try:
                    outcome = combine(rv.parts)
                except Exception as exc:
                    outcome = exc
                rv.results[generation] = [outcome, rv.size]
                rv.generation += 1
                rv.parts = [None] * rv.size
                rv.arrived = 0
                self._cond.notify_all()
                return self._take(rv, generation)

        with self.waiting():
            deadline = time.monotonic() + self.timeout
            with self._cond:
                while generation not in rv.results:
                    self._raise_if_aborted()
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        raise CollectiveTimeoutError(
                            f"{group.axis} collective over ranks {group.members} timed out after {self.timeout:.0f}s"
                        )
                    self._cond.wait(remaining)
                return self._take(rv, generation)

    def _take(self, rv: _Rendezvous, generation: int) -> np.ndarray:
        entry = rv.results[generation]
        entry[1] -= 1
        if entry[1] == 0:
            del rv.results[generation]
        outcome = entry[0]
        if isinstance(outcome, Exception):
            raise outcome
        return outcome.copy()

    def _raise_if_aborted(self) -> None:
        if self._abort_reason is not None:
            raise CollectiveAbortedError(self._abort_reason)


class AxisGroup:
    """One rank's handle on its group along one axis"""

    def __init__(self, rank_comm: "RankComm", group: Group):
        self.axis = group.axis
        self.group = group
        self._rank_comm = rank_comm
        self._index = group.index_of(rank_comm.rank)

    @property
    def size(self) -> int:
        return self.group.size

    @property
    def index(self) -> int:
        return self._index

    def all_reduce(self, buffer: np.ndarray, precision: str = "fp32", phase: Optional[str] = None) -> np.ndarray:
        """
        Sum over members in ascending coordinate order

        With ``bf16comm`` each contribution is rounded to bfloat16 first and
        the sum is kept in the buffer's dtype. A singleton group is the identity.
        """
        _check_precision(precision)
        buffer = np.asarray(buffer)
        if self.size == 1:
            return buffer.copy()
        payload = buffer
        element_bytes = buffer.itemsize
        if precision == "bf16comm":
            payload = bf16_round(buffer).astype(buffer.dtype)
            element_bytes = 2
        self._charge("all_reduce", buffer.size * element_bytes * (self.size - 1) / self.size, phase)
        return self._rank_comm.comm.exchange(self.group, self._index, payload, _ordered_sum)

    def all_reduce_max(self, buffer: np.ndarray, phase: Optional[str] = None) -> np.ndarray:
        buffer = np.asarray(buffer)
        if self.size == 1:
            return buffer.copy()
        self._charge("all_reduce_max", buffer.nbytes * (self.size - 1) / self.size, phase)
        return self._rank_comm.comm.exchange(self.group, self._index, buffer, _ordered_max)

    def all_reduce_async(self, buffer: np.ndarray, precision: str = "fp32") -> Future:
        """all_reduce on a helper thread; attributed to the phase active at submission"""
        if self.size == 1:
            return _completed(np.asarray(buffer).copy())
        phase = self._rank_comm.current_phase
        return self._rank_comm.executor().submit(self.all_reduce, buffer, precision, phase)

    def wait(self, future: Future) -> np.ndarray:
        """Result of an async collective; the compute slot is free while blocked"""
        with self._rank_comm.comm.waiting():
            return future.result()

    def all_gather(self, shard: np.ndarray, axis: int = 0, phase: Optional[str] = None) -> np.ndarray:
        """
        Concatenate every member's shard along ``axis`` in coordinate order

        Shards may differ in length along ``axis``; each member is charged for
        the bytes it receives.
        """
        shard = np.asarray(shard)
        if self.size == 1:
            return shard.copy()

        def concat(parts):
            others = {p.shape[:axis] + p.shape[axis + 1:] for p in parts}
            if len(others) != 1:
                raise ContractViolation(f"all_gather shards disagree off axis {axis}")
            return np.concatenate(parts, axis=axis)

        gathered = self._rank_comm.comm.exchange(self.group, self._index, shard, concat)
        self._charge("all_gather", gathered.nbytes - shard.nbytes, phase)
        return gathered

    def _charge(self, kind: str, nbytes: float, phase: Optional[str]) -> None:
        rank_comm = self._rank_comm
        rank_comm.comm.recorder.record(
            kind, self.axis, phase or rank_comm.current_phase, rank_comm.coord.d, nbytes, rank_comm.rank
        )


class LocalGroup:
    """Singleton group without a communicator; every collective is the identity"""

    def __init__(self, axis: str):
        self.axis = axis

    @property
    def size(self) -> int:
        return 1

    @property
    def index(self) -> int:
        return 0

    def all_reduce(self, buffer: np.ndarray, precision: str = "fp32") -> np.ndarray:
        _check_precision(precision)
        return np.asarray(buffer).copy()

    def all_reduce_max(self, buffer: np.ndarray) -> np.ndarray:
        return np.asarray(buffer).copy()

    def all_reduce_async(self, buffer: np.ndarray, precision: str = "fp32") -> Future:
        return _completed(self.all_reduce(buffer, precision))

    def wait(self, future: Future) -> np.ndarray:
        return future.result()

    def all_gather(self, shard: np.ndarray, axis: int = 0) -> np.ndarray:
        return np.asarray(shard).copy()


def local_groups() -> Dict[str, LocalGroup]:
    return {axis: LocalGroup(axis) for axis in ("D",) + PMM_AXES}


class RankComm:
    """A rank's view of the communicator: its groups and the active phase"""

    def __init__(self, comm: Communicator, rank: int):
        self.comm = comm
        self.rank = rank
        self.coord: RankCoord = comm.grid.coord_of(rank)
        self.current_phase = "other"
        self._groups: Dict[str, AxisGroup] = {}
        self._executor: Optional[ThreadPoolExecutor] = None

    def group(self, axis: str) -> AxisGroup:
        if axis not in self._groups:
            self._groups[axis] = AxisGroup(self, self.comm.grid.group(axis, self.rank))
        return self._groups[axis]

    def groups(self) -> Dict[str, AxisGroup]:
        """Groups along D, X, Y and Z"""
        return {axis: self.group(axis) for axis in ("D",) + PMM_AXES}

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        """Attribute collectives issued inside the block to ``name``"""
        if name not in PHASES:
            raise InputError(f"unknown phase {name!r}")
        previous, self.current_phase = self.current_phase, name
        try:
            yield
        finally:
            self.current_phase = previous

    def executor(self) -> ThreadPoolExecutor:
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=3, thread_name_prefix=f"rank-{self.rank}-comm")
        return self._executor

    def stats(self) -> CommStats:
        return self.comm.stats()

    def shutdown(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
