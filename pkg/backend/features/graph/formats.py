"""
Dataset File Formats
Edge-list text files and the SGNF / SGNL / SGNS little-endian binary files
"""

import logging
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from ..utils.errors import InputError
from .csr import INDEX_DTYPE
from .dataset import Dataset, normalize_adjacency, undirected_edges

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FEATURE_MAGIC = b"SGNF"
LABEL_MAGIC = b"SGNL"
SPLIT_MAGIC = b"SGNS"

_U64 = struct.Struct("<Q")
_U64X2 = struct.Struct("<QQ")


def read_edge_list(path: PathLike) -> np.ndarray:
    """
    Parse a `u v` per line edge list

    Args:
        path: UTF-8 text file; `#` starts a comment

    Returns:
        (m, 2) int64 array

    Raises:
        InputError: with the 1-based line number of a malformed or non-UTF-8 line
    """
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as err:
        line_no = raw.count(b"\n", 0, err.start) + 1
        raise InputError(f"invalid UTF-8 at byte {err.start}", path=str(path), offset=line_no) from err

    pairs = []
    for line_no, line in enumerate(text.split("\n"), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 2:
            raise InputError(f"expected 'u v', got {body!r}", path=str(path), offset=line_no)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise InputError(f"non-integer vertex id in {body!r}", path=str(path), offset=line_no)
        if u < 0 or v < 0:
            raise InputError("negative vertex id", path=str(path), offset=line_no)
        pairs.append((u, v))
    if not pairs:
        return np.zeros((0, 2), dtype=INDEX_DTYPE)
    return np.asarray(pairs, dtype=INDEX_DTYPE)


def write_edge_list(path: PathLike, edges: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("# u v\n")
        for u, v in np.asarray(edges, dtype=INDEX_DTYPE):
            handle.write(f"{u} {v}\n")


def _read_header(path: PathLike, raw: bytes, magic: bytes, header: struct.Struct) -> Tuple[int, ...]:
    if raw[:4] != magic:
        raise InputError(f"bad magic {raw[:4]!r}, expected {magic!r}", path=str(path), offset=0)
    if len(raw) < 4 + header.size:
        raise InputError("truncated header", path=str(path), offset=len(raw))
    return header.unpack_from(raw, 4)


def _payload(path: PathLike, raw: bytes, start: int, expected: int) -> bytes:
    if len(raw) - start != expected:
        raise InputError(
            f"payload is {len(raw) - start} bytes, header implies {expected}",
            path=str(path),
            offset=start,
        )
    return raw[start:]


def read_features(path: PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    n, d_in = _read_header(path, raw, FEATURE_MAGIC, _U64X2)
    start = 4 + _U64X2.size
    body = _payload(path, raw, start, n * d_in * 4)
    return np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(n, d_in)


def read_labels(path: PathLike) -> Tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    n, n_classes = _read_header(path, raw, LABEL_MAGIC, _U64X2)
    start = 4 + _U64X2.size
    body = _payload(path, raw, start, n * 4)
    labels = np.frombuffer(body, dtype="<i4").astype(np.int64)
    bad = np.flatnonzero((labels < 0) | (labels >= n_classes))
    if bad.size:
        raise InputError(
            f"class id {labels[bad[0]]} outside [0, {n_classes})",
            path=str(path),
            offset=start + 4 * int(bad[0]),
        )
    return labels, int(n_classes)


def read_split(path: PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    (n,) = _read_header(path, raw, SPLIT_MAGIC, _U64)
    start = 4 + _U64.size
    body = _payload(path, raw, start, n)
    split = np.frombuffer(body, dtype=np.uint8).copy()
    bad = np.flatnonzero(split > 3)
    if bad.size:
        raise InputError(f"split tag {split[bad[0]]} is not 0-3", path=str(path), offset=start + int(bad[0]))
    return split


def write_features(path: PathLike, features: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    with open(path, "wb") as handle:
        handle.write(FEATURE_MAGIC + _U64X2.pack(*features.shape))
        handle.write(features.tobytes())


def write_labels(path: PathLike, labels: np.ndarray, n_classes: int) -> None:
    with open(path, "wb") as handle:
        handle.write(LABEL_MAGIC + _U64X2.pack(len(labels), n_classes))
        handle.write(np.asarray(labels, dtype="<i4").tobytes())


def write_split(path: PathLike, split: np.ndarray) -> None:
    with open(path, "wb") as handle:
        handle.write(SPLIT_MAGIC + _U64.pack(len(split)))
        handle.write(np.asarray(split, dtype=np.uint8).tobytes())


def load_dataset(
    graph_path: PathLike,
    feature_path: PathLike,
    label_path: PathLike,
    split_path: PathLike,
) -> Dataset:
    """
    Load the four dataset files and normalize the adjacency

    Raises:
        InputError: on any format or consistency problem, naming the file
    """
    features = read_features(feature_path)
    labels, n_classes = read_labels(label_path)
    split = read_split(split_path)
    n = features.shape[0]
    if labels.shape[0] != n:
        raise InputError(f"label count {labels.shape[0]} != feature rows {n}", path=str(label_path), offset=4)
    if split.shape[0] != n:
        raise InputError(f"split count {split.shape[0]} != feature rows {n}", path=str(split_path), offset=4)

    edges = read_edge_list(graph_path)
    if edges.size and edges.max() >= n:
        raise InputError(f"vertex id {int(edges.max())} >= {n}", path=str(graph_path))
    adjacency = normalize_adjacency(edges, n)
    adjacency.check_canonical()

    dataset = Dataset(adjacency, features, labels, split, n_classes)
    logger.info(f"Loaded dataset: n={n}, nnz={adjacency.nnz}, d_in={dataset.d_in}, classes={n_classes}")
    return dataset


def save_dataset(
    dataset: Dataset,
    graph_path: PathLike,
    feature_path: PathLike,
    label_path: PathLike,
    split_path: PathLike,
) -> None:
    """Write a dataset in the four-file format; features and labels round-trip bit-exactly"""
    write_edge_list(graph_path, undirected_edges(dataset.adjacency))
    write_features(feature_path, dataset.features)
    write_labels(label_path, dataset.labels, dataset.n_classes)
    write_split(split_path, dataset.split)
    logger.info(f"Saved dataset with {dataset.n} vertices")
