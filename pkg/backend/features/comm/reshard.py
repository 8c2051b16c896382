"""
Resharding
Move a sharded dense matrix from one plane layout to another
"""

from typing import Mapping

import logging

import numpy as np

from ..pmm.layout import Layout, ShardedTensor

logger = logging.getLogger(__name__)


def reshard(tensor: ShardedTensor, to_layout: Layout, groups: Mapping) -> ShardedTensor:
    """
    Re-partition ``tensor`` onto ``to_layout``

    Rows are gathered along the old row axis when the row axis changes, and
    columns along the old column axis when the column axis changes; the
    target block is then sliced locally. The global matrix is unchanged and
    every replica along the new third axis ends up with the same block.
    """
    if tensor.layout == to_layout:
        return tensor

    block = tensor.local
    rows_changed = to_layout.row_axis != tensor.layout.row_axis
    cols_changed = to_layout.col_axis != tensor.layout.col_axis
    if rows_changed:
        block = groups[tensor.layout.row_axis].all_gather(block, axis=0)
    if cols_changed:
        block = groups[tensor.layout.col_axis].all_gather(block, axis=1)

    row_group, col_group = groups[to_layout.row_axis], groups[to_layout.col_axis]
    row_slot = (row_group.size, row_group.index)
    col_slot = (col_group.size, col_group.index)
    if rows_changed:
        r0, r1 = tensor.rows.range(*row_slot)
        block = block[r0:r1]
    if cols_changed:
        c0, c1 = tensor.cols.range(*col_slot)
        block = block[:, c0:c1]
    logger.debug(f"resharded {tensor.layout} -> {to_layout}: block {block.shape}")
    return ShardedTensor(np.ascontiguousarray(block), to_layout, tensor.rows, tensor.cols, row_slot, col_slot)
