"""
Tests for the graph package: CSR storage, normalized adjacency, datasets and file formats
"""

import pytest
import numpy as np
import sys
import os

from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

# Add the backend directory to the path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from backend.features.graph import (
    CsrMatrix,
    Dataset,
    Split,
    assign_splits,
    csr_transpose,
    generate_synthetic,
    load_dataset,
    normalize_adjacency,
    read_edge_list,
    save_dataset,
    select_rows,
)
from backend.features.graph.dataset import _decode_pairs
from backend.features.graph.formats import read_features, read_labels, write_labels
from backend.features.utils.errors import ContractViolation, InputError


def _dense_normalized(edges, n):
    """Dense oracle for D^-1/2 (A + I) D^-1/2"""
    a = np.eye(n)
    for u, v in edges:
        if u != v:
            a[u, v] = a[v, u] = 1.0
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))


@st.composite
def edge_lists(draw, max_n=12):
    n = draw(st.integers(min_value=1, max_value=max_n))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=40))
    return n, pairs


class TestCsrMatrix:
    """Test cases for CsrMatrix"""

    @pytest.fixture
    def dense(self):
        return np.array([[1.0, 0.0, 2.0], [0.0, 0.0, 0.0], [3.0, 4.0, 0.0]], dtype=np.float32)

    def test_from_dense_round_trip(self, dense):
        a = CsrMatrix.from_dense(dense)
        a.check_canonical()
        assert a.nnz == 4
        assert_array_equal(a.row_ptr, [0, 2, 2, 4])
        assert_array_equal(a.to_dense(), dense)

    def test_from_coo_sorts_unordered_triples(self):
        a = CsrMatrix.from_coo([2, 0, 0], [1, 2, 0], [5.0, 2.0, 1.0], (3, 3))
        a.check_canonical()
        assert_array_equal(a.col_idx, [0, 2, 1])

    def test_from_coo_rejects_duplicates(self):
        with pytest.raises(InputError):
            CsrMatrix.from_coo([0, 0], [1, 1], [1.0, 2.0], (2, 2))

    def test_from_coo_rejects_out_of_range(self):
        with pytest.raises(InputError):
            CsrMatrix.from_coo([0], [3], [1.0], (2, 3))

    def test_check_canonical_flags_unsorted_row(self):
        bad = CsrMatrix(1, 3, np.array([0, 2]), np.array([2, 0]), np.array([1.0, 1.0]))
        with pytest.raises(ContractViolation):
            bad.check_canonical()

    def test_check_canonical_flags_non_finite(self):
        bad = CsrMatrix(1, 1, np.array([0, 1]), np.array([0]), np.array([np.nan]))
        with pytest.raises(ContractViolation):
            bad.check_canonical()

    def test_spmm_matches_dense(self, dense):
        a = CsrMatrix.from_dense(dense)
        x = np.arange(6, dtype=np.float32).reshape(3, 2)
        assert_allclose(a.spmm(x), dense @ x)
        assert a.spmm(x).dtype == np.float32

    def test_spmm_shape_mismatch(self, dense):
        with pytest.raises(ContractViolation):
            CsrMatrix.from_dense(dense).spmm(np.ones((2, 2), dtype=np.float32))

    def test_transpose_single_entry(self):
        a = CsrMatrix.from_coo([0], [1], [7.0], (2, 2))
        t = csr_transpose(a)
        assert_array_equal(t.to_dense(), [[0.0, 0.0], [7.0, 0.0]])

    def test_transpose_of_empty(self):
        t = csr_transpose(CsrMatrix.empty(2, 3))
        assert t.shape == (3, 2)
        assert t.nnz == 0

    @given(st.integers(1, 8), st.integers(1, 8), st.data())
    @settings(max_examples=50, deadline=None)
    def test_transpose_is_an_involution(self, n_rows, n_cols, data):
        mask = data.draw(st.lists(st.booleans(), min_size=n_rows * n_cols, max_size=n_rows * n_cols))
        values = np.arange(n_rows * n_cols, dtype=np.float64).reshape(n_rows, n_cols) + 1.0
        dense = np.where(np.reshape(mask, (n_rows, n_cols)), values, 0.0)
        a = CsrMatrix.from_dense(dense)
        t = csr_transpose(a)
        t.check_canonical()
        assert_array_equal(t.to_dense(), dense.T)
        assert csr_transpose(t).equals(a)

    def test_select_rows_and_slice_block(self, dense):
        a = CsrMatrix.from_dense(dense)
        assert_array_equal(select_rows(a, np.array([2, 0])).to_dense(), dense[[2, 0]])
        block = a.slice_block(0, 3, 1, 3)
        assert block.n_cols == 3
        assert_array_equal(block.col_idx, [2, 1])

    def test_diagonal(self, dense):
        assert_array_equal(CsrMatrix.from_dense(dense).diagonal(), [1.0, 0.0, 0.0])


class TestNormalizeAdjacency:
    """Test cases for normalize_adjacency"""

    def test_single_edge(self):
        a = normalize_adjacency([(0, 1)], 2)
        assert_allclose(a.to_dense(), np.full((2, 2), 0.5))

    def test_isolated_vertex_gets_unit_self_loop(self):
        a = normalize_adjacency(np.zeros((0, 2)), 1)
        assert_array_equal(a.to_dense(), [[1.0]])

    def test_triangle_with_duplicates(self):
        a = normalize_adjacency([(0, 1), (1, 2), (2, 0), (1, 0)], 3)
        assert a.nnz == 9
        assert_allclose(a.to_dense(), np.full((3, 3), 1.0 / 3.0), rtol=1e-6)

    def test_input_self_loop_dropped(self):
        a = normalize_adjacency([(0, 0), (0, 1)], 2)
        assert_allclose(a.to_dense(), np.full((2, 2), 0.5))

    def test_vertex_out_of_range(self):
        with pytest.raises(InputError):
            normalize_adjacency([(0, 3)], 3)

    def test_zero_vertices(self):
        with pytest.raises(InputError):
            normalize_adjacency([], 0)

    @given(edge_lists())
    @settings(max_examples=60, deadline=None)
    def test_matches_dense_oracle(self, case):
        n, pairs = case
        a = normalize_adjacency(pairs, n, dtype=np.float64)
        a.check_canonical()
        dense = a.to_dense()
        assert_allclose(dense, dense.T)
        assert np.all(a.diagonal() > 0)
        assert_allclose(dense, _dense_normalized(pairs, n), rtol=1e-12)


class TestDataset:
    """Test cases for the Dataset container and synthetic generation"""

    @pytest.fixture
    def synthetic(self):
        return generate_synthetic(n=60, avg_degree=4.0, d_in=8, n_classes=4, seed=7)

    def test_counts_consistent(self, synthetic):
        assert synthetic.n == 60
        assert synthetic.features.shape == (60, 8)
        assert synthetic.labels.max() < 4
        synthetic.adjacency.check_canonical()

    def test_same_seed_is_bit_identical(self, synthetic):
        again = generate_synthetic(n=60, avg_degree=4.0, d_in=8, n_classes=4, seed=7)
        assert again.adjacency.equals(synthetic.adjacency)
        assert_array_equal(again.features, synthetic.features)
        assert_array_equal(again.labels, synthetic.labels)

    def test_different_seed_differs(self, synthetic):
        other = generate_synthetic(n=60, avg_degree=4.0, d_in=8, n_classes=4, seed=8)
        assert not np.array_equal(other.features, synthetic.features)

    def test_zero_degree_graph_has_only_self_loops(self):
        d = generate_synthetic(n=10, avg_degree=0.0, d_in=2, n_classes=2, seed=1)
        assert d.adjacency.nnz == 10
        assert_array_equal(d.adjacency.diagonal(), np.ones(10, dtype=np.float32))

    def test_classes_by_degree_quantile(self, synthetic):
        counts = np.bincount(synthetic.labels, minlength=4)
        assert_array_equal(counts, [15, 15, 15, 15])

    @pytest.mark.parametrize("n, avg_degree", [(1000, 10.0), (20, 10.0), (50, 30.0)])
    def test_mean_degree_tracks_target(self, n, avg_degree):
        d = generate_synthetic(n=n, avg_degree=avg_degree, d_in=2, n_classes=2, seed=4)
        # off-diagonal entries count each undirected edge twice
        mean_degree = (d.adjacency.nnz - n) / n
        assert abs(mean_degree - avg_degree) <= 0.2 * avg_degree

    def test_dense_request_gives_complete_graph(self):
        d = generate_synthetic(n=12, avg_degree=11.0, d_in=2, n_classes=2, seed=0)
        assert d.adjacency.nnz == 12 * 12

    def test_pair_decoding_covers_upper_triangle(self):
        n = 9
        keys = np.arange(n * (n - 1) // 2, dtype=np.int64)
        edges = _decode_pairs(keys, n)
        expected = [(u, v) for u in range(n) for v in range(u + 1, n)]
        assert [tuple(e) for e in edges.tolist()] == expected

    def test_invalid_parameters(self):
        with pytest.raises(InputError):
            generate_synthetic(n=0, avg_degree=1.0, d_in=2, n_classes=2, seed=0)
        with pytest.raises(InputError):
            generate_synthetic(n=5, avg_degree=1.0, d_in=2, n_classes=9, seed=0)

    def test_label_outside_classes_rejected(self, synthetic):
        with pytest.raises(InputError):
            Dataset(synthetic.adjacency, synthetic.features, synthetic.labels + 4, synthetic.split, 4)

    def test_astype_float64(self, synthetic):
        d64 = synthetic.astype(np.float64)
        assert d64.features.dtype == np.float64
        assert d64.adjacency.dtype == np.float64

    def test_assign_splits_fractions(self):
        split = assign_splits(100, seed=3)
        assert np.count_nonzero(split == Split.TRAIN) == 60
        assert np.count_nonzero(split == Split.VAL) == 20
        assert np.count_nonzero(split == Split.TEST) == 20


class TestFormats:
    """Test cases for the edge list and binary dataset files"""

    @pytest.fixture
    def paths(self, tmp_path):
        return (
            tmp_path / "graph.txt",
            tmp_path / "features.sgnf",
            tmp_path / "labels.sgnl",
            tmp_path / "split.sgns",
        )

    def test_save_then_load(self, paths):
        d = generate_synthetic(n=30, avg_degree=3.0, d_in=5, n_classes=3, seed=11)
        save_dataset(d, *paths)
        loaded = load_dataset(*paths)
        assert_array_equal(loaded.features, d.features)
        assert_array_equal(loaded.labels, d.labels)
        assert_array_equal(loaded.split, d.split)
        assert loaded.adjacency.equals(d.adjacency)

    def test_edge_list_comments_and_bad_line(self, tmp_path):
        good = tmp_path / "good.txt"
        good.write_text("# header\n0 1\n\n2 3  # trailing\n")
        assert_array_equal(read_edge_list(good), [[0, 1], [2, 3]])

        bad = tmp_path / "bad.txt"
        bad.write_text("0 1\n2\n")
        with pytest.raises(InputError) as info:
            read_edge_list(bad)
        assert info.value.offset == 2

    def test_edge_list_invalid_utf8(self, tmp_path):
        path = tmp_path / "latin.txt"
        path.write_bytes(b"0 1\n\xff\xfe 1\n")
        with pytest.raises(InputError) as info:
            read_edge_list(path)
        assert info.value.path == str(path)
        assert info.value.offset == 2

    def test_feature_magic_mismatch(self, tmp_path):
        path = tmp_path / "features.sgnf"
        path.write_bytes(b"XXXX" + bytes(16))
        with pytest.raises(InputError) as info:
            read_features(path)
        assert info.value.offset == 0

    def test_feature_length_mismatch(self, tmp_path):
        path = tmp_path / "features.sgnf"
        path.write_bytes(b"SGNF" + (2).to_bytes(8, "little") + (3).to_bytes(8, "little") + bytes(8))
        with pytest.raises(InputError):
            read_features(path)

    def test_label_out_of_range_reports_offset(self, tmp_path):
        path = tmp_path / "labels.sgnl"
        write_labels(path, np.array([0, 5]), 2)
        with pytest.raises(InputError) as info:
            read_labels(path)
        assert info.value.offset == 20 + 4

    def test_count_mismatch_between_files(self, paths):
        d = generate_synthetic(n=10, avg_degree=2.0, d_in=2, n_classes=2, seed=0)
        save_dataset(d, *paths)
        write_labels(paths[2], d.labels[:9], 2)
        with pytest.raises(InputError):
            load_dataset(*paths)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
