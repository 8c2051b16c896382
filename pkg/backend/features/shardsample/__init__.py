"""
Shard Sampling Module
Communication-free per-rank construction of mini-batch adjacency shards
"""

from .local_minibatch import (
    CsrShard,
    RemapTable,
    WorkCounters,
    Triples,
    CompactTriples,
    MiniBatchShard,
    locate_ranges,
    extract_rows,
    filter_and_remap,
    assemble_shard,
    build_local_minibatch,
    build_plane_shards,
    full_graph_sample,
)

__all__ = [
    'CsrShard',
    'RemapTable',
    'WorkCounters',
    'Triples',
    'CompactTriples',
    'MiniBatchShard',
    'locate_ranges',
    'extract_rows',
    'filter_and_remap',
    'assemble_shard',
    'build_local_minibatch',
    'build_plane_shards',
    'full_graph_sample',
]
