"""
Uniform Vertex Sampling
Serial reference: sample B vertices, induce the subgraph, rescale edges, slice features
"""

from dataclasses import dataclass
from typing import Optional

import logging
import numpy as np

from ..graph.csr import INDEX_DTYPE, CsrMatrix, csr_transpose, select_rows
from ..graph.dataset import Dataset
from ..utils.errors import InputError
from ..utils.seeding import generator, mix_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Sorted distinct vertex ids drawn for one step"""

    vertices: np.ndarray
    batch_size: int
    graph_size: int
    seed: int
    step: int

    @classmethod
    def full(cls, n: int) -> "SampleSet":
        """Every vertex; used for full-graph evaluation"""
        return cls(np.arange(n, dtype=INDEX_DTYPE), n, n, 0, 0)

    def __len__(self) -> int:
        return int(self.vertices.size)


@dataclass(frozen=True, eq=False)
class MiniBatch:
    """Rescaled induced subgraph with its transpose, features and labels"""

    adjacency: CsrMatrix
    adjacency_t: CsrMatrix
    features: np.ndarray
    labels: np.ndarray
    sample: SampleSet


def group_seed(base_seed: int, group_id: int) -> int:
    """Seed for one data-parallel group; groups sample independently"""
    return mix_seed(base_seed, group_id)


def inclusion_probability(b: int, n: int) -> float:
    """p = (B - 1) / (N - 1): chance a neighbour is sampled given its partner is"""
    if n <= 1:
        raise InputError(f"rescaling needs N > 1, got {n}")
    if b < 2:
        raise InputError(f"batch of {b} cannot rescale off-diagonal edges (p = 0)")
    return (b - 1) / (n - 1)


def sample_vertices(n: int, b: int, seed: int, step: int) -> SampleSet:
    """
    Draw B distinct vertices uniformly without replacement

    The permutation comes from PCG64 seeded with seed + step, so every rank
    holding the same (seed, step) derives the identical set.

    Args:
        n: Graph size
        b: Batch size
        seed: Base seed (already mixed with the DP group id)
        step: Global step counter

    Returns:
        SampleSet with sorted vertices
    """
    if b < 1 or b > n:
        raise InputError(f"batch size must be in [1, {n}], got {b}")
    perm = generator(seed + step).permutation(n)[:b]
    vertices = np.sort(perm).astype(INDEX_DTYPE)
    return SampleSet(vertices, b, n, seed, step)


def induce_subgraph(a: CsrMatrix, s: SampleSet) -> CsrMatrix:
    """
    Entries of ``a`` with both endpoints in ``s``, reindexed by rank within ``s``

    Values are copied unchanged.
    """
    rows = select_rows(a, s.vertices)
    positions = np.searchsorted(s.vertices, rows.col_idx)
    clipped = np.minimum(positions, len(s) - 1)
    keep = (positions < len(s)) & (s.vertices[clipped] == rows.col_idx)

    counts = np.bincount(rows.row_ids()[keep], minlength=len(s))
    row_ptr = np.zeros(len(s) + 1, dtype=INDEX_DTYPE)
    np.cumsum(counts, out=row_ptr[1:])
    return CsrMatrix(len(s), len(s), row_ptr, positions[keep].astype(INDEX_DTYPE), rows.values[keep])


def rescale_edges(a_s: CsrMatrix, b: int, n: int) -> CsrMatrix:
    """
    Divide off-diagonal values by p = (b-1)/(n-1); diagonal stays bit-identical

    Raises:
        InputError: for b = 1 (p = 0) or n <= 1
    """
    p = inclusion_probability(b, n)
    values = a_s.values.copy()
    off_diagonal = a_s.row_ids() != a_s.col_idx
    values[off_diagonal] = values[off_diagonal] / p
    return CsrMatrix(a_s.n_rows, a_s.n_cols, a_s.row_ptr, a_s.col_idx, values)


def slice_minibatch(dataset: Dataset, sample: SampleSet) -> MiniBatch:
    """Induce, rescale and slice features and labels for an existing sample"""
    a_s = induce_subgraph(dataset.adjacency, sample)
    if sample.graph_size > 1:
        a_s = rescale_edges(a_s, len(sample), sample.graph_size)
    return MiniBatch(
        adjacency=a_s,
        adjacency_t=csr_transpose(a_s),
        features=dataset.features[sample.vertices],
        labels=dataset.labels[sample.vertices],
        sample=sample,
    )


def build_minibatch(dataset: Dataset, b: int, seed: int, step: int) -> MiniBatch:
    """
    One serial mini-batch: sample, induce, rescale, slice

    Args:
        dataset: Source dataset
        b: Batch size, 2 <= b <= N
        seed: Group seed
        step: Global step

    Returns:
        MiniBatch; a pure function of (dataset, b, seed, step)
    """
    if b < 2:
        raise InputError(f"batch size must be at least 2, got {b}")
    sample = sample_vertices(dataset.n, b, seed, step)
    return slice_minibatch(dataset, sample)


@dataclass
class SamplingReport:
    """Monte Carlo statistics of the sampler over many draws"""

    draws: int
    inclusion_frequency: np.ndarray
    conditional_mean: np.ndarray
    full_aggregation: np.ndarray
    expected_inclusion: float

    @property
    def max_inclusion_error(self) -> float:
        return float(np.max(np.abs(self.inclusion_frequency - self.expected_inclusion)))

    @property
    def relative_bias(self) -> np.ndarray:
        scale = np.maximum(np.abs(self.full_aggregation), 1e-12)
        return np.abs(self.conditional_mean - self.full_aggregation) / scale

    @property
    def max_relative_bias(self) -> float:
        return float(np.max(self.relative_bias))


def aggregation_bias(
    dataset: Dataset,
    b: int,
    draws: int,
    seed: int,
    features: Optional[np.ndarray] = None,
) -> SamplingReport:
    """
    Compare the conditional mean of rescaled mini-batch aggregation with the
    full-graph aggregation, vertex by vertex

    Args:
        dataset: Dataset to sample from
        b: Batch size
        draws: Number of independent batches
        seed: Base seed; draw t uses step t
        features: N x k features to aggregate; defaults to all-ones

    Returns:
        SamplingReport
    """
    n = dataset.n
    x = np.ones((n, 1), dtype=np.float64) if features is None else np.asarray(features, dtype=np.float64)
    adjacency = dataset.adjacency.astype(np.float64)
    full = adjacency.spmm(x)

    totals = np.zeros_like(full)
    hits = np.zeros(n, dtype=np.int64)
    for step in range(draws):
        sample = sample_vertices(n, b, seed, step)
        a_s = induce_subgraph(adjacency, sample)
        if n > 1:
            a_s = rescale_edges(a_s, b, n)
        totals[sample.vertices] += a_s.spmm(x[sample.vertices])
        hits[sample.vertices] += 1

    seen = np.maximum(hits, 1)[:, None]
    report = SamplingReport(
        draws=draws,
        inclusion_frequency=hits / draws,
        conditional_mean=totals / seen,
        full_aggregation=full,
        expected_inclusion=b / n,
    )
    logger.info(
        f"Sampled {draws} batches of {b}/{n}: max inclusion error "
        f"{report.max_inclusion_error:.4f}, max relative bias {report.max_relative_bias:.4f}"
    )
    return report
