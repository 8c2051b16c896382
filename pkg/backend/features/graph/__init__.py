"""
Graph Module
CSR storage, normalized adjacency, datasets and their file formats
"""

from .csr import CsrMatrix, csr_transpose, select_rows
from .dataset import (
    Dataset,
    Split,
    normalize_adjacency,
    generate_synthetic,
    assign_splits,
    undirected_edges,
)
from .formats import load_dataset, save_dataset, read_edge_list, write_edge_list

__all__ = [
    'CsrMatrix',
    'csr_transpose',
    'select_rows',
    'Dataset',
    'Split',
    'normalize_adjacency',
    'generate_synthetic',
    'assign_splits',
    'undirected_edges',
    'load_dataset',
    'save_dataset',
    'read_edge_list',
    'write_edge_list',
]
