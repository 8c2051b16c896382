"""
Device Grid
Virtual 4D grid (D, X, Y, Z), rank <-> coordinate mapping and per-axis groups
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple

import logging
import re

from ..utils.errors import InputError

logger = logging.getLogger(__name__)

AXES: Tuple[str, ...] = ("D", "X", "Y", "Z")
PMM_AXES: Tuple[str, ...] = ("X", "Y", "Z")


@dataclass(frozen=True)
class RankCoord:
    """Coordinates of one rank in the 4D grid"""

    d: int
    x: int
    y: int
    z: int

    def get(self, axis: str) -> int:
        return getattr(self, axis.lower())

    def replace(self, axis: str, value: int) -> "RankCoord":
        values = {a: self.get(a) for a in AXES}
        values[axis] = value
        return RankCoord(values["D"], values["X"], values["Y"], values["Z"])


@dataclass(frozen=True)
class Group:
    """
    Ranks that differ only in one axis coordinate

    Members are sorted by that coordinate, so ``members[i]`` has coordinate i.
    """

    axis: str
    members: Tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.members)

    def index_of(self, rank: int) -> int:
        return self.members.index(rank)


@dataclass(frozen=True)
class DeviceGrid:
    """Grid of G = g_d * g_x * g_y * g_z virtual ranks"""

    g_d: int
    g_x: int
    g_y: int
    g_z: int

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        return (self.g_d, self.g_x, self.g_y, self.g_z)

    @property
    def size(self) -> int:
        return self.g_d * self.g_x * self.g_y * self.g_z

    @property
    def pmm_size(self) -> int:
        """Ranks per data-parallel group"""
        return self.g_x * self.g_y * self.g_z

    def axis_size(self, axis: str) -> int:
        return dict(zip(AXES, self.dims))[axis]

    def rank_of(self, coord: RankCoord) -> int:
        return ((coord.d * self.g_x + coord.x) * self.g_y + coord.y) * self.g_z + coord.z

    def coord_of(self, rank: int) -> RankCoord:
        if not 0 <= rank < self.size:
            raise InputError(f"rank {rank} outside grid of {self.size}")
        rank, z = divmod(rank, self.g_z)
        rank, y = divmod(rank, self.g_y)
        d, x = divmod(rank, self.g_x)
        return RankCoord(d, x, y, z)

    def group(self, axis: str, rank: int) -> Group:
        """The group along ``axis`` that contains ``rank``"""
        coord = self.coord_of(rank)
        members = tuple(self.rank_of(coord.replace(axis, i)) for i in range(self.axis_size(axis)))
        return Group(axis, members)

    def groups(self, axis: str) -> List[Group]:
        """Every group along ``axis``; each rank appears in exactly one"""
        seen: Dict[Tuple[int, ...], Group] = {}
        for rank in range(self.size):
            group = self.group(axis, rank)
            seen.setdefault(group.members, group)
        return sorted(seen.values(), key=lambda g: g.members)

    def __str__(self) -> str:
        return "x".join(str(d) for d in self.dims)


def build_grid(g_d: int, g_x: int, g_y: int, g_z: int) -> DeviceGrid:
    """
    Build the virtual grid

    Raises:
        InputError: if any dimension is below 1
    """
    dims = (g_d, g_x, g_y, g_z)
    if any(int(d) < 1 for d in dims):
        raise InputError(f"grid dimensions must be >= 1, got {dims}")
    grid = DeviceGrid(*(int(d) for d in dims))
    logger.debug(f"Built grid {grid} with {grid.size} ranks")
    return grid


def parse_grid(text: str) -> DeviceGrid:
    """Parse the `GdxGxxGyxGz` flag format, e.g. `2x2x2x1`"""
    match = re.fullmatch(r"\s*(\d+)x(\d+)x(\d+)x(\d+)\s*", str(text))
    if not match:
        raise InputError(f"grid must look like 2x2x2x1, got {text!r}")
    return build_grid(*(int(v) for v in match.groups()))
