"""
Distributed Subgraph Construction
Per-rank, communication-free extraction of the local mini-batch shard from a 2D
CSR shard of the normalized adjacency
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import logging
import numpy as np

from ..graph.csr import INDEX_DTYPE, CsrMatrix, csr_transpose
from ..graph.dataset import Dataset
from ..sampling.uniform import SampleSet, inclusion_probability, sample_vertices
from ..utils.errors import ContractViolation, InputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CsrShard:
    """
    Rows [r0, r1) and columns [c0, c1) of the global normalized adjacency

    ``local`` has r1 - r0 rows and keeps GLOBAL column ids.
    """

    local: CsrMatrix
    r0: int
    r1: int
    c0: int
    c1: int

    @classmethod
    def from_global(cls, a: CsrMatrix, r0: int, r1: int, c0: int, c1: int) -> "CsrShard":
        if not (0 <= r0 <= r1 <= a.n_rows and 0 <= c0 <= c1 <= a.n_cols):
            raise InputError(f"shard ranges [{r0},{r1})x[{c0},{c1}) outside {a.shape}")
        return cls(a.slice_block(r0, r1, c0, c1), r0, r1, c0, c1)


@dataclass
class WorkCounters:
    """Per-rank work done by the shard builder, for complexity checks"""

    rows_touched: int = 0
    nnz_extracted: int = 0
    remap_writes: int = 0


class RemapTable:
    """
    Persistent global-id -> compact-id map tagged with the step counter

    An entry is valid only while its tag equals the current step, so the
    table is never cleared; each step writes O(B) entries.
    """

    def __init__(self, n: int):
        self.tags = np.full(n, -1, dtype=np.int64)
        self.row_index = np.zeros(n, dtype=INDEX_DTYPE)
        self.col_index = np.zeros(n, dtype=INDEX_DTYPE)

    def assign(self, s_r: np.ndarray, s_c: np.ndarray, step: int) -> int:
        """Tag the local sample ranges with ``step``; returns the number of writes"""
        self.tags[s_r] = step
        self.tags[s_c] = step
        self.row_index[s_r] = np.arange(s_r.size, dtype=INDEX_DTYPE)
        self.col_index[s_c] = np.arange(s_c.size, dtype=INDEX_DTYPE)
        return int(s_r.size + s_c.size)

    def valid_count(self, step: int) -> int:
        return int(np.count_nonzero(self.tags == step))

    def lookup(self, rows: np.ndarray, cols: np.ndarray, step: int) -> Tuple[np.ndarray, np.ndarray]:
        if np.any(self.tags[rows] != step) or np.any(self.tags[cols] != step):
            raise ContractViolation(f"remap lookup of an id not tagged for step {step}")
        return self.row_index[rows], self.col_index[cols]


@dataclass(frozen=True, eq=False)
class Triples:
    """Flat (row, col, value) nonzeros with global ids"""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return int(self.rows.size)


@dataclass(frozen=True, eq=False)
class CompactTriples:
    """Filtered triples with compact ids; global ids kept for the diagonal test"""

    rows_g: np.ndarray
    cols_g: np.ndarray
    rows_c: np.ndarray
    cols_c: np.ndarray
    values: np.ndarray
    n_rows: int
    n_cols: int


@dataclass(frozen=True, eq=False)
class MiniBatchShard:
    """
    One rank's share of a mini-batch for one adjacency plane

    ``x_s`` holds feature rows S_c (the side the SpMM contracts over) restricted
    to the rank's feature columns; ``y_s`` holds labels of rows S_r.
    """

    a_loc: CsrMatrix
    a_t_loc: CsrMatrix
    x_s: np.ndarray
    y_s: np.ndarray
    s_r: np.ndarray
    s_c: np.ndarray
    sample: SampleSet
    row_offset: int = 0
    col_offset: int = 0


def locate_ranges(s: SampleSet, r0: int, r1: int, c0: int, c1: int) -> Tuple[np.ndarray, np.ndarray]:
    """Phase 1: S restricted to the row and column ranges, by binary search"""
    lo_r, hi_r = np.searchsorted(s.vertices, [r0, r1])
    lo_c, hi_c = np.searchsorted(s.vertices, [c0, c1])
    return s.vertices[lo_r:hi_r], s.vertices[lo_c:hi_c]


def extract_rows(shard: CsrShard, s_r: np.ndarray, counters: Optional[WorkCounters] = None) -> Triples:
    """
    Phase 2: every nonzero of the sampled rows as flat global triples

    nnz per row -> prefix sum -> sorted search maps each flat index back to
    its owning row; one gather then reads all triples.
    """
    local_rows = np.asarray(s_r, dtype=INDEX_DTYPE) - shard.r0
    if local_rows.size and (local_rows.min() < 0 or local_rows.max() >= shard.r1 - shard.r0):
        raise ContractViolation("sampled rows outside the shard row range")
    row_ptr = shard.local.row_ptr
    starts = row_ptr[local_rows]
    counts = row_ptr[local_rows + 1] - starts
    prefix = np.cumsum(counts)
    total = int(prefix[-1]) if prefix.size else 0

    flat = np.arange(total, dtype=INDEX_DTYPE)
    owner = np.searchsorted(prefix, flat, side="right")
    gather = starts[owner] + flat - (prefix[owner] - counts[owner])

    if counters is not None:
        counters.rows_touched += int(local_rows.size)
        counters.nnz_extracted += total
    return Triples(
        rows=np.asarray(s_r, dtype=INDEX_DTYPE)[owner],
        cols=shard.local.col_idx[gather],
        values=shard.local.values[gather],
    )


def filter_and_remap(
    triples: Triples,
    s_r: np.ndarray,
    s_c: np.ndarray,
    remap: RemapTable,
    step: int,
    counters: Optional[WorkCounters] = None,
) -> CompactTriples:
    """
    Phase 3: keep columns in S_c (binary-search membership) and remap ids to
    the dense [0, |S_r|) x [0, |S_c|) namespace through the tagged table
    """
    positions = np.searchsorted(s_c, triples.cols)
    clipped = np.minimum(positions, max(s_c.size - 1, 0))
    member = (positions < s_c.size) & (s_c[clipped] == triples.cols) if s_c.size else np.zeros(len(triples), bool)

    rows_g, cols_g, values = triples.rows[member], triples.cols[member], triples.values[member]
    writes = remap.assign(s_r, s_c, step)
    if counters is not None:
        counters.remap_writes += writes
    rows_c, cols_c = remap.lookup(rows_g, cols_g, step)
    return CompactTriples(rows_g, cols_g, rows_c, cols_c, values, int(s_r.size), int(s_c.size))


def assemble_shard(compact: CompactTriples, b: int, n: int) -> Tuple[CsrMatrix, CsrMatrix]:
    """
    Phase 4: divide off-diagonal values (global row != global col) by p and
    build the local CSR together with its transpose
    """
    values = compact.values.copy()
    if n > 1:
        p = inclusion_probability(b, n)
        off_diagonal = compact.rows_g != compact.cols_g
        values[off_diagonal] = values[off_diagonal] / p

    counts = np.bincount(compact.rows_c, minlength=compact.n_rows)
    row_ptr = np.zeros(compact.n_rows + 1, dtype=INDEX_DTYPE)
    np.cumsum(counts, out=row_ptr[1:])
    a_loc = CsrMatrix(compact.n_rows, compact.n_cols, row_ptr, compact.cols_c.astype(INDEX_DTYPE), values)
    return a_loc, csr_transpose(a_loc)


def build_local_minibatch(
    shard: CsrShard,
    dataset: Dataset,
    b: int,
    seed: int,
    step: int,
    remap: RemapTable,
    feature_cols: Optional[Tuple[int, int]] = None,
    sample: Optional[SampleSet] = None,
    counters: Optional[WorkCounters] = None,
) -> MiniBatchShard:
    """
    All four phases for one rank; no communication

    Args:
        shard: This rank's adjacency shard
        dataset: Read-only dataset (features and labels are sliced locally)
        b: Batch size shared by the group
        seed: Group seed shared by the group
        step: Global step
        remap: This rank's persistent remap table
        feature_cols: Feature column range held by this rank; all columns if None
        sample: Pre-drawn sample (full-graph evaluation); drawn from (seed, step) if None
        counters: Optional work counters

    Returns:
        MiniBatchShard
    """
    if sample is None:
        if b < 2:
            raise InputError(f"batch size must be at least 2, got {b}")
        sample = sample_vertices(dataset.n, b, seed, step)

    s_r, s_c = locate_ranges(sample, shard.r0, shard.r1, shard.c0, shard.c1)
    triples = extract_rows(shard, s_r, counters)
    compact = filter_and_remap(triples, s_r, s_c, remap, step, counters)
    a_loc, a_t_loc = assemble_shard(compact, len(sample), sample.graph_size)

    k0, k1 = feature_cols if feature_cols is not None else (0, dataset.d_in)
    row_offset = int(np.searchsorted(sample.vertices, shard.r0))
    col_offset = int(np.searchsorted(sample.vertices, shard.c0))
    logger.debug(f"step {step}: local shard {a_loc.shape} with {a_loc.nnz} nonzeros")
    return MiniBatchShard(
        a_loc=a_loc,
        a_t_loc=a_t_loc,
        x_s=dataset.features[s_c, k0:k1],
        y_s=dataset.labels[s_r],
        s_r=s_r,
        s_c=s_c,
        sample=sample,
        row_offset=row_offset,
        col_offset=col_offset,
    )


def build_plane_shards(
    shards: Dict[str, CsrShard],
    dataset: Dataset,
    b: int,
    seed: int,
    step: int,
    remap: RemapTable,
    feature_cols: Optional[Tuple[int, int]] = None,
    sample: Optional[SampleSet] = None,
    counters: Optional[WorkCounters] = None,
) -> Dict[str, MiniBatchShard]:
    """
    Run the builder once per rotation plane the model uses (at most three)

    The sample is drawn once and shared, so every plane sees the same S.
    """
    if sample is None:
        if b < 2:
            raise InputError(f"batch size must be at least 2, got {b}")
        sample = sample_vertices(dataset.n, b, seed, step)
    return {
        plane: build_local_minibatch(shard, dataset, b, seed, step, remap, feature_cols, sample, counters)
        for plane, shard in shards.items()
    }


def full_graph_sample(n: int) -> SampleSet:
    """Every vertex; with b = n the builder leaves values unscaled (p = 1)"""
    return SampleSet.full(n)
