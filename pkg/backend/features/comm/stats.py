"""
Communication Statistics
Byte and call accounting for simulated collectives, by axis, phase and DP group
"""

import threading
from collections import defaultdict
from typing import Dict, Optional

from pydantic import BaseModel, Field

from .grid import AXES

PHASES = ("sampling", "forward", "backward", "dp_sync", "eval", "other")


class CommStats(BaseModel):
    """Snapshot of cumulative communication counters; every counter only grows"""

    bytes_by_axis: Dict[str, float] = Field(
        default_factory=lambda: {axis: 0.0 for axis in AXES}, description="Bytes per grid axis"
    )
    bytes_by_phase: Dict[str, float] = Field(
        default_factory=lambda: {phase: 0.0 for phase in PHASES}, description="Bytes per training phase"
    )
    calls: Dict[str, int] = Field(default_factory=dict, description="Call count per collective kind")
    bytes_by_group: Dict[int, Dict[str, float]] = Field(
        default_factory=dict, description="Bytes per axis for each data-parallel group"
    )

    @property
    def total_bytes(self) -> float:
        return float(sum(self.bytes_by_axis.values()))

    def axis_bytes(self, axis: str, dp_group: Optional[int] = None) -> float:
        if dp_group is None:
            return self.bytes_by_axis.get(axis, 0.0)
        return self.bytes_by_group.get(dp_group, {}).get(axis, 0.0)

    def delta(self, earlier: "CommStats") -> "CommStats":
        """Counters accumulated since ``earlier``"""
        groups = {
            gid: {axis: value - earlier.bytes_by_group.get(gid, {}).get(axis, 0.0) for axis, value in axes.items()}
            for gid, axes in self.bytes_by_group.items()
        }
        return CommStats(
            bytes_by_axis={k: v - earlier.bytes_by_axis.get(k, 0.0) for k, v in self.bytes_by_axis.items()},
            bytes_by_phase={k: v - earlier.bytes_by_phase.get(k, 0.0) for k, v in self.bytes_by_phase.items()},
            calls={k: v - earlier.calls.get(k, 0) for k, v in self.calls.items()},
            bytes_by_group=groups,
        )


class StatsRecorder:
    """Thread-safe accumulator behind CommStats snapshots"""

    def __init__(self, byte_factor: float = 1.0):
        self.byte_factor = byte_factor
        self._lock = threading.Lock()
        self._axis = defaultdict(float)
        self._phase = defaultdict(float)
        self._calls = defaultdict(int)
        self._group = defaultdict(lambda: defaultdict(float))
        self._rank = defaultdict(lambda: defaultdict(float))

    def record(self, kind: str, axis: str, phase: str, dp_group: int, nbytes: float, rank: int = 0) -> None:
        nbytes = nbytes * self.byte_factor
        with self._lock:
            self._rank[rank][axis] += nbytes
            self._axis[axis] += nbytes
            self._phase[phase] += nbytes
            self._calls[kind] += 1
            self._group[dp_group][axis] += nbytes

    def snapshot(self) -> CommStats:
        with self._lock:
            return CommStats(
                bytes_by_axis={axis: self._axis[axis] for axis in AXES},
                bytes_by_phase={phase: self._phase[phase] for phase in PHASES},
                calls=dict(self._calls),
                bytes_by_group={gid: {axis: axes[axis] for axis in AXES} for gid, axes in self._group.items()},
            )

    def rank_bytes(self, rank: int) -> Dict[str, float]:
        """Bytes charged to one rank so far, per axis"""
        with self._lock:
            return {axis: self._rank[rank][axis] for axis in AXES}
