"""
CSR Matrix
Compressed sparse row storage for the normalized adjacency and its sampled shards
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.sparse as sp

from ..utils.errors import ContractViolation, InputError

INDEX_DTYPE = np.int64


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """
    Canonical CSR matrix with explicit values

    Canonical form: row_ptr non-decreasing from 0 to nnz, column ids strictly
    increasing inside every row and below n_cols, all values finite.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    @classmethod
    def from_coo(
        cls,
        rows: np.ndarray,
        cols: np.ndarray,
        values: np.ndarray,
        shape: Tuple[int, int],
    ) -> "CsrMatrix":
        """
        Build a canonical matrix from coordinate triples in any order

        Args:
            rows: Row index per entry
            cols: Column index per entry
            values: Value per entry
            shape: (n_rows, n_cols)

        Returns:
            Canonical CsrMatrix

        Raises:
            InputError: on out-of-range or duplicate coordinates
        """
        n_rows, n_cols = int(shape[0]), int(shape[1])
        rows = np.asarray(rows, dtype=INDEX_DTYPE)
        cols = np.asarray(cols, dtype=INDEX_DTYPE)
        values = np.asarray(values)
        if not (rows.shape == cols.shape == values.shape):
            raise InputError("COO arrays must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
            raise InputError(f"COO coordinate outside {n_rows}x{n_cols}")

        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size > 1:
            same = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if same.any():
                raise InputError("duplicate COO coordinate")

        counts = np.bincount(rows, minlength=n_rows)
        row_ptr = np.zeros(n_rows + 1, dtype=INDEX_DTYPE)
        np.cumsum(counts, out=row_ptr[1:])
        return cls(n_rows, n_cols, row_ptr, cols, values)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "CsrMatrix":
        """Build from a dense array, keeping only nonzero entries"""
        dense = np.asarray(dense)
        rows, cols = np.nonzero(dense)
        return cls.from_coo(rows, cols, dense[rows, cols], dense.shape)

    @classmethod
    def empty(cls, n_rows: int, n_cols: int, dtype=np.float32) -> "CsrMatrix":
        return cls(
            n_rows,
            n_cols,
            np.zeros(n_rows + 1, dtype=INDEX_DTYPE),
            np.zeros(0, dtype=INDEX_DTYPE),
            np.zeros(0, dtype=dtype),
        )

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.col_idx.size)

    @property
    def dtype(self):
        return self.values.dtype

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry (COO row array)"""
        return np.repeat(np.arange(self.n_rows, dtype=INDEX_DTYPE), np.diff(self.row_ptr))

    def check_canonical(self) -> None:
        """Raise ContractViolation unless every canonical-form invariant holds"""
        rp, ci = self.row_ptr, self.col_idx
        if rp.shape != (self.n_rows + 1,) or rp[0] != 0:
            raise ContractViolation("row_ptr must have n_rows+1 entries starting at 0")
        if np.any(np.diff(rp) < 0):
            raise ContractViolation("row_ptr must be non-decreasing")
        if rp[-1] != ci.size or ci.size != self.values.size:
            raise ContractViolation("row_ptr[-1], len(col_idx) and len(values) disagree")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.n_cols:
                raise ContractViolation("column index out of range")
            step = np.diff(ci)
            boundary = np.zeros(ci.size - 1, dtype=bool)
            starts = rp[1:-1]
            starts = starts[(starts > 0) & (starts < ci.size)]
            boundary[starts - 1] = True
            if np.any((step <= 0) & ~boundary):
                raise ContractViolation("column ids must strictly increase within a row")
        if not np.all(np.isfinite(self.values)):
            raise ContractViolation("values must be finite")

    def astype(self, dtype) -> "CsrMatrix":
        return CsrMatrix(self.n_rows, self.n_cols, self.row_ptr, self.col_idx, self.values.astype(dtype))

    def diagonal(self) -> np.ndarray:
        """Stored diagonal values (zero where no diagonal entry exists)"""
        diag = np.zeros(min(self.n_rows, self.n_cols), dtype=self.values.dtype)
        rows = self.row_ids()
        on_diag = rows == self.col_idx
        diag[rows[on_diag]] = self.values[on_diag]
        return diag

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.col_idx, self.row_ptr), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.shape, dtype=self.values.dtype)
        dense[self.row_ids(), self.col_idx] = self.values
        return dense

    def spmm(self, dense: np.ndarray) -> np.ndarray:
        """Sparse times dense; result keeps the dense operand's dtype"""
        if dense.shape[0] != self.n_cols:
            raise ContractViolation(f"spmm shape mismatch: {self.shape} @ {dense.shape}")
        if self.nnz == 0:
            return np.zeros((self.n_rows, dense.shape[1]), dtype=dense.dtype)
        out = self.to_scipy().astype(dense.dtype, copy=False) @ dense
        return np.asarray(out, dtype=dense.dtype)

    def slice_block(self, r0: int, r1: int, c0: int, c1: int) -> "CsrMatrix":
        """Rows [r0, r1) restricted to columns [c0, c1); column ids stay global"""
        rows = select_rows(self, np.arange(r0, r1, dtype=INDEX_DTYPE))
        keep = (rows.col_idx >= c0) & (rows.col_idx < c1)
        counts = np.bincount(rows.row_ids()[keep], minlength=r1 - r0)
        row_ptr = np.zeros(r1 - r0 + 1, dtype=INDEX_DTYPE)
        np.cumsum(counts, out=row_ptr[1:])
        return CsrMatrix(r1 - r0, self.n_cols, row_ptr, rows.col_idx[keep], rows.values[keep])

    def equals(self, other: "CsrMatrix") -> bool:
        """Bit-exact equality of shape, structure and values"""
        return (
            self.shape == other.shape
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and self.values.dtype == other.values.dtype
            and np.array_equal(self.values.view(np.uint8), other.values.view(np.uint8))
        )


def csr_transpose(a: CsrMatrix) -> CsrMatrix:
    """
    Exact transpose in canonical form

    A stable sort on column ids keeps source rows ascending inside every
    output row, so no second sort is needed.
    """
    counts = np.bincount(a.col_idx, minlength=a.n_cols)
    row_ptr = np.zeros(a.n_cols + 1, dtype=INDEX_DTYPE)
    np.cumsum(counts, out=row_ptr[1:])
    order = np.argsort(a.col_idx, kind="stable")
    return CsrMatrix(a.n_cols, a.n_rows, row_ptr, a.row_ids()[order], a.values[order])


def select_rows(a: CsrMatrix, rows: np.ndarray) -> CsrMatrix:
    """Sub-matrix made of the given rows, all columns kept"""
    rows = np.asarray(rows, dtype=INDEX_DTYPE)
    starts, ends = a.row_ptr[rows], a.row_ptr[rows + 1]
    counts = ends - starts
    row_ptr = np.zeros(rows.size + 1, dtype=INDEX_DTYPE)
    np.cumsum(counts, out=row_ptr[1:])
    flat = np.repeat(starts - row_ptr[:-1], counts) + np.arange(row_ptr[-1], dtype=INDEX_DTYPE)
    values = a.values[flat]
    return CsrMatrix(rows.size, a.n_cols, row_ptr, a.col_idx[flat], values)
