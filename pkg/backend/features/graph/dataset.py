"""
Graph Dataset
Normalized adjacency construction, the Dataset container and synthetic graph generation
"""

from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Sequence, Tuple

import logging
import numpy as np

from ..utils.errors import InputError
from ..utils.seeding import generator, mix_seed
from .csr import INDEX_DTYPE, CsrMatrix

logger = logging.getLogger(__name__)


class Split(IntEnum):
    """Per-vertex split tag, as stored in the split file"""
    TRAIN = 0
    VAL = 1
    TEST = 2
    UNUSED = 3


def _as_edge_array(edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=INDEX_DTYPE)
    if edges.size == 0:
        return np.zeros((0, 2), dtype=INDEX_DTYPE)
    if edges.ndim != 2 or edges.shape[1] != 2:
        raise InputError(f"edge list must have shape (m, 2), got {edges.shape}")
    return edges


def normalize_adjacency(edges, n: int, dtype=np.float32) -> CsrMatrix:
    """
    Build D^-1/2 (A + I) D^-1/2 for an undirected graph

    Input self-loops and duplicate edges are dropped, every edge is
    symmetrized and exactly one self-loop per vertex is added.

    Args:
        edges: (m, 2) array-like of vertex id pairs
        n: Vertex count
        dtype: Value dtype of the result

    Returns:
        Canonical symmetric CsrMatrix of shape (n, n)
    """
    if n <= 0:
        raise InputError(f"vertex count must be positive, got {n}")
    edges = _as_edge_array(edges)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise InputError(f"vertex id outside [0, {n})")

    u, v = edges[:, 0], edges[:, 1]
    keep = u != v
    u, v = u[keep], v[keep]
    loops = np.arange(n, dtype=INDEX_DTYPE)
    rows = np.concatenate([u, v, loops])
    cols = np.concatenate([v, u, loops])
    keys = np.unique(rows * n + cols)
    rows, cols = keys // n, keys % n

    degree = np.bincount(rows, minlength=n).astype(np.float64)
    values = (1.0 / np.sqrt(degree[rows] * degree[cols])).astype(dtype)

    row_ptr = np.zeros(n + 1, dtype=INDEX_DTYPE)
    np.cumsum(np.bincount(rows, minlength=n), out=row_ptr[1:])
    return CsrMatrix(n, n, row_ptr, cols, values)


def undirected_edges(adjacency: CsrMatrix) -> np.ndarray:
    """Each undirected non-loop edge once, as (u, v) with u < v"""
    rows = adjacency.row_ids()
    upper = rows < adjacency.col_idx
    return np.stack([rows[upper], adjacency.col_idx[upper]], axis=1)


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Immutable graph dataset shared read-only by every rank

    Attributes:
        adjacency: Normalized N x N adjacency
        features: N x d_in row-major features
        labels: Class id per vertex
        split: Split tag per vertex
        n_classes: Number of classes (d_out)
    """

    adjacency: CsrMatrix
    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.validate()

    @property
    def n(self) -> int:
        return self.adjacency.n_rows

    @property
    def d_in(self) -> int:
        return int(self.features.shape[1])

    def validate(self) -> None:
        """Check the container invariants; raises InputError"""
        n = self.adjacency.n_rows
        if self.adjacency.n_cols != n:
            raise InputError("adjacency must be square")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise InputError(f"feature rows {self.features.shape[0]} != vertex count {n}")
        if self.labels.shape != (n,) or self.split.shape != (n,):
            raise InputError("label and split arrays must have one entry per vertex")
        if self.n_classes < 1:
            raise InputError("n_classes must be positive")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InputError(f"class id outside [0, {self.n_classes})")

    def astype(self, dtype) -> "Dataset":
        """Same dataset with features and adjacency values in ``dtype``"""
        return replace(
            self,
            adjacency=self.adjacency.astype(dtype),
            features=self.features.astype(dtype),
        )

    def mask(self, tag: Split) -> np.ndarray:
        return self.split == int(tag)


def assign_splits(
    n: int, seed: int, fractions: Sequence[float] = (0.6, 0.2, 0.2)
) -> np.ndarray:
    """
    Deterministic random train/val/test split

    Args:
        n: Vertex count
        seed: Base seed
        fractions: Train, val and test fractions; any remainder is UNUSED

    Returns:
        uint8 split tags
    """
    if len(fractions) != 3 or min(fractions) < 0 or sum(fractions) > 1.0 + 1e-9:
        raise InputError(f"invalid split fractions {fractions}")
    order = generator(mix_seed(seed, 0x5B117)).permutation(n)
    split = np.full(n, int(Split.UNUSED), dtype=np.uint8)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = min(int(round(fractions[2] * n)), n - n_train - n_val)
    split[order[:n_train]] = Split.TRAIN
    split[order[n_train:n_train + n_val]] = Split.VAL
    split[order[n_train + n_val:n_train + n_val + n_test]] = Split.TEST
    return split


def _random_edges(n: int, avg_degree: float, rng: np.random.Generator) -> np.ndarray:
    """Erdos-Renyi style draw: binomial edge count, then that many distinct pairs u < v"""
    if n < 2 or avg_degree <= 0:
        return np.zeros((0, 2), dtype=INDEX_DTYPE)
    pairs = n * (n - 1) // 2
    m = int(rng.binomial(pairs, min(1.0, avg_degree / (n - 1))))
    keys = np.sort(rng.choice(pairs, size=m, replace=False)).astype(INDEX_DTYPE)
    return _decode_pairs(keys, n)


def _row_start(u: np.ndarray, n: int) -> np.ndarray:
    return u * (2 * n - u - 1) // 2


def _decode_pairs(keys: np.ndarray, n: int) -> np.ndarray:
    """Map row-major upper-triangle indices back to (u, v) with u < v"""
    pairs = n * (n - 1) // 2
    tail = (pairs - 1 - keys).astype(np.float64)
    u = (n - 2 - np.floor((np.sqrt(8.0 * tail + 1.0) - 1.0) / 2.0)).astype(INDEX_DTYPE)
    u = np.clip(u, 0, n - 2)
    # float rounding can land one row off
    u = np.where(_row_start(u, n) > keys, u - 1, u)
    u = np.where(_row_start(u + 1, n) <= keys, u + 1, u)
    v = keys - _row_start(u, n) + u + 1
    return np.stack([u, v], axis=1)


def degree_quantile_classes(degree: np.ndarray, n_classes: int) -> np.ndarray:
    """Sort vertices by degree (ties by id) and cut into equal quantiles"""
    n = degree.size
    order = np.argsort(degree, kind="stable")
    labels = np.empty(n, dtype=np.int64)
    labels[order] = (np.arange(n, dtype=np.int64) * n_classes) // n
    return labels


def generate_synthetic(
    n: int,
    avg_degree: float,
    d_in: int,
    n_classes: int,
    seed: int,
    feature_signal: float = 0.0,
    split_fractions: Tuple[float, float, float] = (0.6, 0.2, 0.2),
) -> Dataset:
    """
    Random undirected graph with degree-quantile classes

    Args:
        n: Vertex count
        avg_degree: Expected vertex degree
        d_in: Feature dimension
        n_classes: Number of classes
        seed: Seed; equal seeds give bit-identical datasets
        feature_signal: Scale of a per-class mean added to the features.
            0 gives pure i.i.d. standard normal features.
        split_fractions: Train/val/test fractions

    Returns:
        Dataset with normalized adjacency
    """
    if n < 1:
        raise InputError(f"n must be at least 1, got {n}")
    if avg_degree < 0:
        raise InputError(f"avg_degree must be non-negative, got {avg_degree}")
    if n_classes < 2:
        raise InputError(f"n_classes must be at least 2, got {n_classes}")
    if n_classes > n:
        raise InputError(f"n_classes {n_classes} exceeds vertex count {n}")
    if d_in < 1:
        raise InputError(f"d_in must be positive, got {d_in}")

    rng = generator(mix_seed(seed, 0x6E47))
    edges = _random_edges(n, avg_degree, rng)
    adjacency = normalize_adjacency(edges, n)

    degree = np.bincount(edges.ravel(), minlength=n) if edges.size else np.zeros(n, dtype=np.int64)
    labels = degree_quantile_classes(degree, n_classes)

    features = rng.standard_normal((n, d_in), dtype=np.float32)
    if feature_signal:
        centroids = rng.standard_normal((n_classes, d_in), dtype=np.float32)
        features += np.float32(feature_signal) * centroids[labels]

    split = assign_splits(n, seed, split_fractions)
    logger.info(
        f"Generated synthetic graph: n={n}, undirected edges={len(edges)}, "
        f"d_in={d_in}, classes={n_classes}"
    )
    return Dataset(adjacency, features, labels, split, n_classes)
