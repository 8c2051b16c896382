"""
Communication Module
Virtual 4D device grid, simulated collectives, byte accounting and bf16 emulation

Resharding lives in ``comm.reshard`` and is imported from there directly.
"""

from .bfloat16 import bf16_bits, bf16_round, bf16_to_float32
from .collectives import (
    PRECISIONS,
    AxisGroup,
    Communicator,
    LocalGroup,
    ProcessGroup,
    RankComm,
    local_groups,
)
from .grid import AXES, PMM_AXES, DeviceGrid, Group, RankCoord, build_grid, parse_grid
from .partition import block_bounds, block_range
from .runtime import run_ranks
from .stats import PHASES, CommStats, StatsRecorder

__all__ = [
    'bf16_bits',
    'bf16_round',
    'bf16_to_float32',
    'PRECISIONS',
    'AxisGroup',
    'Communicator',
    'LocalGroup',
    'ProcessGroup',
    'RankComm',
    'local_groups',
    'AXES',
    'PMM_AXES',
    'DeviceGrid',
    'Group',
    'RankCoord',
    'build_grid',
    'parse_grid',
    'block_bounds',
    'block_range',
    'run_ranks',
    'PHASES',
    'CommStats',
    'StatsRecorder',
]
