"""
Plane Layouts
Ordered plane orientations, batch-row and feature-column partitions, sharded
dense tensors and the layer rotation schedule
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..comm.partition import block_bounds, block_range
from ..utils.errors import ContractViolation, InputError

_AXES = ("X", "Y", "Z")
_PLANE_TAGS = {frozenset("XY"): "XY", frozenset("YZ"): "YZ", frozenset("ZX"): "ZX"}


@dataclass(frozen=True)
class Layout:
    """
    A matrix sharded with rows along ``row_axis`` and columns along ``col_axis``

    The remaining axis replicates the matrix. XY and YX are the same plane
    with opposite orientation.
    """

    row_axis: str
    col_axis: str

    def __post_init__(self):
        if self.row_axis not in _AXES or self.col_axis not in _AXES or self.row_axis == self.col_axis:
            raise InputError(f"invalid layout ({self.row_axis}, {self.col_axis})")

    @property
    def plane(self) -> str:
        return _PLANE_TAGS[frozenset((self.row_axis, self.col_axis))]

    @property
    def third_axis(self) -> str:
        return next(a for a in _AXES if a not in (self.row_axis, self.col_axis))

    def adjacency(self) -> "Layout":
        """Adjacency layout for features on this layout: (t, r)"""
        return Layout(self.third_axis, self.row_axis)

    def weight(self) -> "Layout":
        """Layer weight layout for features on this layout: (c, r)"""
        return Layout(self.col_axis, self.row_axis)

    def rotate(self) -> "Layout":
        """Layout of a layer's output: (t, r)"""
        return Layout(self.third_axis, self.row_axis)

    def __str__(self) -> str:
        return f"({self.row_axis},{self.col_axis})"


INPUT_LAYOUT = Layout("X", "Z")
INPUT_WEIGHT_LAYOUT = Layout("Z", "Y")
FEATURE_LAYOUT = Layout("X", "Y")


def layer_input_layout(layer: int) -> Layout:
    if layer < 1:
        raise InputError(f"layers are numbered from 1, got {layer}")
    layout = FEATURE_LAYOUT
    for _ in range(layer - 1):
        layout = layout.rotate()
    return layout


def rotation_plane(layer: int) -> str:
    """Plane holding the adjacency for ``layer``: ZX, YZ, XY, then repeating"""
    return layer_input_layout(layer).adjacency().plane


@dataclass(frozen=True)
class LayerPlan:
    """Layouts used by one layer"""

    layer: int
    features_in: Layout
    adjacency: Layout
    aggregated: Layout
    weight: Layout
    features_out: Layout


@dataclass(frozen=True)
class RotationSchedule:
    """Per-layer layouts for an L-layer model; adjacency planes have period three"""

    n_layers: int

    def __post_init__(self):
        if self.n_layers < 1:
            raise InputError(f"model needs at least one layer, got {self.n_layers}")

    def layer(self, layer: int) -> LayerPlan:
        f_in = layer_input_layout(layer)
        return LayerPlan(
            layer=layer,
            features_in=f_in,
            adjacency=f_in.adjacency(),
            aggregated=Layout(f_in.third_axis, f_in.col_axis),
            weight=f_in.weight(),
            features_out=f_in.rotate(),
        )

    @property
    def layers(self) -> List[LayerPlan]:
        return [self.layer(l) for l in range(1, self.n_layers + 1)]

    @property
    def planes(self) -> List[str]:
        return [plan.adjacency.plane for plan in self.layers]

    @property
    def adjacency_layouts(self) -> Dict[str, Layout]:
        """Distinct adjacency layouts keyed by plane (at most three)"""
        return {plan.adjacency.plane: plan.adjacency for plan in self.layers}

    @property
    def output_features(self) -> Layout:
        return self.layer(self.n_layers).features_out

    @property
    def head_weight(self) -> Layout:
        out = self.output_features
        return Layout(out.col_axis, out.third_axis)

    @property
    def logits(self) -> Layout:
        out = self.output_features
        return Layout(out.row_axis, out.third_axis)


class EvenPartition:
    """Contiguous near-even split of a feature dimension"""

    def __init__(self, size: int):
        self.size = int(size)

    def bounds(self, parts: int) -> List[int]:
        return block_bounds(self.size, parts)

    def range(self, parts: int, index: int) -> Tuple[int, int]:
        return block_range(self.size, parts, index)


class RowPartition:
    """
    Split of the B batch rows induced by the vertex block partition

    Block i of the batch holds the sampled vertices that fall in vertex
    block i, exactly the rows the shard builder gives that coordinate.
    """

    def __init__(self, vertices: np.ndarray, graph_size: int):
        self.vertices = np.asarray(vertices)
        self.graph_size = int(graph_size)
        self.size = int(self.vertices.size)

    def bounds(self, parts: int) -> List[int]:
        starts = [block_range(self.graph_size, parts, i)[0] for i in range(parts)]
        return [int(v) for v in np.searchsorted(self.vertices, starts)] + [self.size]

    def range(self, parts: int, index: int) -> Tuple[int, int]:
        bounds = self.bounds(parts)
        return bounds[index], bounds[index + 1]


def _axis_info(groups: Mapping, axis: str) -> Tuple[int, int]:
    group = groups[axis]
    return group.size, group.index


@dataclass(eq=False)
class ShardedTensor:
    """
    Dense block of a global matrix plus where it sits

    Rows follow ``rows`` split along the layout's row axis, columns follow
    ``cols`` split along its column axis.
    """

    local: np.ndarray
    layout: Layout
    rows: object
    cols: object
    row_slot: Tuple[int, int]
    col_slot: Tuple[int, int]

    def __post_init__(self):
        if self.local.shape != (self.row_range[1] - self.row_range[0], self.col_range[1] - self.col_range[0]):
            raise ContractViolation(
                f"block {self.local.shape} does not match ranges {self.row_range} x {self.col_range}"
            )

    @property
    def plane(self) -> str:
        return self.layout.plane

    @property
    def global_shape(self) -> Tuple[int, int]:
        return (self.rows.size, self.cols.size)

    @property
    def row_range(self) -> Tuple[int, int]:
        return self.rows.range(*self.row_slot)

    @property
    def col_range(self) -> Tuple[int, int]:
        return self.cols.range(*self.col_slot)

    @classmethod
    def from_global(cls, full: np.ndarray, layout: Layout, rows, cols, groups: Mapping) -> "ShardedTensor":
        """Cut this rank's block out of a replicated global matrix"""
        row_slot = _axis_info(groups, layout.row_axis)
        col_slot = _axis_info(groups, layout.col_axis)
        r0, r1 = rows.range(*row_slot)
        c0, c1 = cols.range(*col_slot)
        return cls(np.ascontiguousarray(full[r0:r1, c0:c1]), layout, rows, cols, row_slot, col_slot)

    @classmethod
    def from_local(cls, local: np.ndarray, layout: Layout, rows, cols, groups: Mapping) -> "ShardedTensor":
        return cls(local, layout, rows, cols, _axis_info(groups, layout.row_axis), _axis_info(groups, layout.col_axis))

    def like(self, local: np.ndarray) -> "ShardedTensor":
        """Same placement, new block"""
        return ShardedTensor(local, self.layout, self.rows, self.cols, self.row_slot, self.col_slot)


def assemble(blocks: Sequence[ShardedTensor], dtype=None) -> np.ndarray:
    """Paste blocks of one global matrix together; replicas overwrite identically"""
    if not blocks:
        raise InputError("nothing to assemble")
    first = blocks[0]
    full = np.zeros(first.global_shape, dtype=dtype or first.local.dtype)
    for block in blocks:
        (r0, r1), (c0, c1) = block.row_range, block.col_range
        full[r0:r1, c0:c1] = block.local
    return full


def param_block(shape: Tuple[int, ...], layout: Optional[Layout], col_axis: Optional[str], groups: Mapping) -> Tuple[slice, ...]:
    """
    Index of this rank's slice of a parameter

    Matrices split rows along ``layout.row_axis`` and columns along
    ``layout.col_axis``; vectors split along ``col_axis`` only.
    """
    if len(shape) == 1:
        parts, index = _axis_info(groups, col_axis)
        start, end = block_range(shape[0], parts, index)
        return (slice(start, end),)
    r_parts, r_index = _axis_info(groups, layout.row_axis)
    c_parts, c_index = _axis_info(groups, layout.col_axis)
    r0, r1 = block_range(shape[0], r_parts, r_index)
    c0, c1 = block_range(shape[1], c_parts, c_index)
    return (slice(r0, r1), slice(c0, c1))
