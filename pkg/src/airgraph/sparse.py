"""Compressed sparse row matrices and the kernels the solver is built from.

Every operator in the package (level matrices, transfer operators, assembled
approximate inverses) is a :class:`SparseMatrix`.  The kernels lean on
``scipy.sparse`` for the arithmetic but own the structural rules: indices
are sorted and unique within each row, and zeros produced by cancellation
are kept until :func:`drop_entries` is called explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

__all__ = [
    "SparseMatrix",
    "LabelMap",
    "DimensionError",
    "MatrixMarketError",
    "spmv",
    "spgemm",
    "transpose",
    "identity",
    "extract_blocks",
    "assemble_blocks",
    "drop_entries",
    "restrict_to_pattern",
    "pattern_union",
    "read_matrix_market",
    "write_matrix_market",
]

F_POINT = 0
C_POINT = 1


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class MatrixMarketError(ValueError):
    """A Matrix Market file could not be parsed."""


def _index_dtype(n):
    return np.int32 if n < np.iinfo(np.int32).max else np.int64


class SparseMatrix:
    """Immutable CSR matrix with sorted, duplicate-free rows.

    Parameters
    ----------
    row_offsets, col_indices, values : array_like
        Standard CSR arrays.
    shape : tuple of int
        ``(nrows, ncols)``.
    check : bool
        Validate the structural invariants (default True).
    """

    __slots__ = ("row_offsets", "col_indices", "values", "shape", "_csr")

    def __init__(self, row_offsets, col_indices, values, shape, check=True):
        nrows, ncols = int(shape[0]), int(shape[1])
        idx = _index_dtype(max(nrows, ncols, len(col_indices)) + 1)
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=idx)
        self.col_indices = np.ascontiguousarray(col_indices, dtype=idx)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.shape = (nrows, ncols)
        for arr in (self.row_offsets, self.col_indices, self.values):
            arr.flags.writeable = False
        self._csr = None
        if check:
            self._validate()

    def _validate(self):
        ro, ci = self.row_offsets, self.col_indices
        nrows, ncols = self.shape
        if ro.shape != (nrows + 1,) or ro[0] != 0:
            raise ValueError("row_offsets must have length nrows+1 and start at 0")
        if ro[-1] != len(ci) or len(ci) != len(self.values):
            raise ValueError("row_offsets[-1] must equal nnz")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if len(ci):
            if ci.min() < 0 or ci.max() >= ncols:
                raise ValueError("column index out of range")
            # strictly increasing within each row
            step = np.diff(ci)
            row_start = np.zeros(len(ci), dtype=bool)
            row_start[ro[:-1][np.diff(ro) > 0]] = True
            if np.any(step[~row_start[1:]] <= 0):
                raise ValueError("column indices must be strictly increasing within rows")
        if np.isnan(self.values).any():
            raise ValueError("NaN stored in sparse matrix")

    # -- construction -----------------------------------------------------
    @classmethod
    def from_scipy(cls, M, check=False):
        """Wrap a scipy sparse matrix, canonicalising without dropping zeros."""
        M = sp.csr_matrix(M)
        if not M.has_canonical_format:
            M = M.copy()
            M.sum_duplicates()
        return cls(M.indptr, M.indices, M.data, M.shape, check=check)

    @classmethod
    def from_dense(cls, D):
        D = np.atleast_2d(np.asarray(D, dtype=np.float64))
        return cls.from_scipy(sp.csr_matrix(D))

    @classmethod
    def from_coo(cls, rows, cols, vals, shape):
        """Build from triplets; duplicates are summed, zeros kept."""
        M = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
        M.sum_duplicates()
        return cls(M.indptr, M.indices, M.data, shape, check=True)

    # -- views --------------------------------------------------------------
    @property
    def nrows(self):
        return self.shape[0]

    @property
    def ncols(self):
        return self.shape[1]

    @property
    def nnz(self):
        return int(self.row_offsets[-1])

    def to_scipy(self):
        """Return a (cached, shared) ``scipy.sparse.csr_matrix`` view."""
        if self._csr is None:
            M = sp.csr_matrix(
                (self.values, self.col_indices, self.row_offsets), shape=self.shape, copy=False
            )
            M.has_sorted_indices = True
            M.has_canonical_format = True
            self._csr = M
        return self._csr

    def toarray(self):
        return self.to_scipy().toarray()

    def row_ids(self):
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.nrows), np.diff(self.row_offsets))

    def diagonal(self):
        """Stored diagonal (zero where absent)."""
        return self.to_scipy().diagonal()

    def has_full_diagonal(self):
        n = min(self.shape)
        rows = self.row_ids()
        return np.count_nonzero(rows == self.col_indices) == n

    def with_diagonal(self):
        """Copy with every missing diagonal inserted as an explicit zero."""
        if self.has_full_diagonal():
            return self
        n = min(self.shape)
        rows = np.concatenate([self.row_ids(), np.arange(n)])
        cols = np.concatenate([self.col_indices, np.arange(n)])
        vals = np.concatenate([self.values, np.zeros(n)])
        return SparseMatrix.from_coo(rows, cols, vals, self.shape)

    def pattern(self):
        """Same structure with every value set to one."""
        return SparseMatrix(
            self.row_offsets, self.col_indices, np.ones(self.nnz), self.shape, check=False
        )

    def __matmul__(self, other):
        if isinstance(other, SparseMatrix):
            return spgemm(self, other)
        return spmv(self, other)

    def __neg__(self):
        return SparseMatrix(
            self.row_offsets, self.col_indices, -self.values, self.shape, check=False
        )

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def __repr__(self):
        return f"SparseMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})"


def identity(n):
    return SparseMatrix(np.arange(n + 1), np.arange(n), np.ones(n), (n, n), check=False)


def spmv(A, x):
    """``y = A x``.  Costs ``2 * A.nnz`` flops."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.ncols:
        raise DimensionError(f"matrix has {A.ncols} columns, vector has length {x.shape[0]}")
    return A.to_scipy() @ x


def transpose(A):
    return SparseMatrix.from_scipy(A.to_scipy().T.tocsr())


def _keys(M):
    rows = np.repeat(np.arange(M.shape[0], dtype=np.int64), np.diff(M.indptr))
    return rows * np.int64(M.shape[1]) + M.indices


def _scatter(pattern, M, require_subset):
    """Values of ``M`` laid onto the structure of ``pattern`` (both canonical CSR)."""
    pkeys = _keys(pattern)
    mkeys = _keys(M)
    out = np.zeros(len(pkeys))
    if len(mkeys) == 0:
        return out
    pos = np.searchsorted(pkeys, mkeys)
    if require_subset:
        out[pos] = M.data
        return out
    pos_c = np.minimum(pos, max(len(pkeys) - 1, 0))
    hit = (pos < len(pkeys)) & (pkeys[pos_c] == mkeys) if len(pkeys) else np.zeros(0, bool)
    out[pos[hit]] = M.data[hit]
    return out


def _canonical(M):
    M = sp.csr_matrix(M)
    M.sum_duplicates()
    M.sort_indices()
    return M


def spgemm(A, B):
    """Sparse product ``A B`` on the full structural pattern.

    Entries that cancel to zero are kept as explicit zeros.
    """
    if A.ncols != B.nrows:
        raise DimensionError(f"cannot multiply {A.shape} by {B.shape}")
    a, b = A.to_scipy(), B.to_scipy()
    # structural product: unit values cannot cancel
    struct = _canonical(
        sp.csr_matrix((np.ones(a.nnz), a.indices, a.indptr), shape=a.shape)
        @ sp.csr_matrix((np.ones(b.nnz), b.indices, b.indptr), shape=b.shape)
    )
    vals = _canonical(a @ b)
    return SparseMatrix(
        struct.indptr, struct.indices, _scatter(struct, vals, True), struct.shape, check=False
    )


def restrict_to_pattern(M, pattern):
    """Return ``M`` restricted to (and padded out to) the structure of ``pattern``."""
    if M.shape != pattern.shape:
        raise DimensionError("pattern shape mismatch")
    p = pattern.to_scipy()
    vals = _scatter(p, M.to_scipy(), False)
    return SparseMatrix(pattern.row_offsets, pattern.col_indices, vals, pattern.shape, check=False)


def pattern_union(A, B):
    """Structure of ``A`` union ``B`` with all values zero."""
    if A.shape != B.shape:
        raise DimensionError("pattern shape mismatch")
    u = _canonical(abs(A.pattern().to_scipy()) + abs(B.pattern().to_scipy()))
    return SparseMatrix(u.indptr, u.indices, np.zeros(u.nnz), u.shape, check=False)


@dataclass(frozen=True)
class LabelMap:
    """Bijection between global rows and their position in the F or C block.

    ``is_fine[i]`` says whether row ``i`` is an F point and ``sub_index[i]``
    gives its index inside that block.  ``fine_rows`` and ``coarse_rows``
    are the inverse maps, each sorted ascending.
    """

    is_fine: np.ndarray
    sub_index: np.ndarray
    fine_rows: np.ndarray
    coarse_rows: np.ndarray

    @classmethod
    def from_fine_mask(cls, is_fine):
        is_fine = np.asarray(is_fine, dtype=bool)
        fine_rows = np.flatnonzero(is_fine)
        coarse_rows = np.flatnonzero(~is_fine)
        sub = np.empty(len(is_fine), dtype=np.int64)
        sub[fine_rows] = np.arange(len(fine_rows))
        sub[coarse_rows] = np.arange(len(coarse_rows))
        return cls(is_fine, sub, fine_rows, coarse_rows)

    @property
    def n(self):
        return len(self.is_fine)

    @property
    def n_fine(self):
        return len(self.fine_rows)

    @property
    def n_coarse(self):
        return len(self.coarse_rows)


def _labels_to_mask(labels):
    lab = np.asarray(getattr(labels, "label", labels))
    if np.any((lab != F_POINT) & (lab != C_POINT)):
        raise ValueError("labels contain unassigned points")
    return lab == F_POINT


def extract_blocks(A, labels):
    """Split ``A`` into ``A_ff, A_fc, A_cf, A_cc`` under a complete CF labelling.

    Parameters
    ----------
    A : SparseMatrix
    labels : CfLabels or array of {0 (F), 1 (C)}

    Returns
    -------
    A_ff, A_fc, A_cf, A_cc : SparseMatrix
    lmap : LabelMap
    """
    if A.nrows != A.ncols:
        raise DimensionError("block extraction needs a square matrix")
    lmap = LabelMap.from_fine_mask(_labels_to_mask(labels))
    a = A.to_scipy()
    f, c = lmap.fine_rows, lmap.coarse_rows
    rows_f, rows_c = a[f], a[c]
    blocks = [
        SparseMatrix.from_scipy(rows_f[:, f]),
        SparseMatrix.from_scipy(rows_f[:, c]),
        SparseMatrix.from_scipy(rows_c[:, f]),
        SparseMatrix.from_scipy(rows_c[:, c]),
    ]
    return (*blocks, lmap)


def assemble_blocks(A_ff, A_fc, A_cf, A_cc, lmap):
    """Inverse of :func:`extract_blocks`: rebuild the global matrix."""
    n = lmap.n
    perm = np.concatenate([lmap.fine_rows, lmap.coarse_rows])
    blk = sp.bmat(
        [[A_ff.to_scipy(), A_fc.to_scipy()], [A_cf.to_scipy(), A_cc.to_scipy()]], format="coo"
    )
    M = sp.coo_matrix((blk.data, (perm[blk.row], perm[blk.col])), shape=(n, n)).tocsr()
    M.sum_duplicates()
    return SparseMatrix(M.indptr, M.indices, M.data, (n, n), check=False)


def drop_entries(A, tol, keep_row_max=False, keep_diagonal=True):
    """Remove small entries relative to each row's infinity norm.

    Entry ``(i, j)`` with ``j != i`` is dropped when
    ``|a_ij| < tol * max_k |a_ik|``.  Diagonal entries always survive.

    Parameters
    ----------
    tol : float
        Non-negative relative tolerance; ``0`` returns ``A`` unchanged.
    keep_row_max : bool
        Also keep the largest-magnitude entry of each row, so rows never
        empty out when ``tol > 1``.
    keep_diagonal : bool
        Protect entries with ``i == j``.  Off for rectangular blocks such as
        ``Z`` whose index-equal entries are not diagonal entries of any
        operator.
    """
    if tol < 0:
        raise ValueError("drop tolerance must be non-negative")
    if tol == 0 or A.nnz == 0:
        return A
    absval = np.abs(A.values)
    nonempty = np.diff(A.row_offsets) > 0
    row_max = np.zeros(A.nrows)
    row_max[nonempty] = np.maximum.reduceat(absval, A.row_offsets[:-1][nonempty])
    rows = A.row_ids()
    keep = absval >= tol * row_max[rows]
    if keep_diagonal:
        keep |= rows == A.col_indices
    if keep_row_max:
        starts = A.row_offsets[:-1][nonempty]
        # first occurrence of the max within each row
        seg = np.repeat(np.arange(len(starts)), np.diff(A.row_offsets)[nonempty])
        is_max = absval == row_max[rows]
        first = np.full(len(starts), -1)
        hit = np.flatnonzero(is_max)
        first_hit = np.unique(seg[hit], return_index=True)
        first[first_hit[0]] = hit[first_hit[1]]
        keep[first[first >= 0]] = True
    if keep.all():
        return A
    counts = np.bincount(rows[keep], minlength=A.nrows)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return SparseMatrix(offsets, A.col_indices[keep], A.values[keep], A.shape, check=False)


def read_matrix_market(path):
    """Read a real, general, coordinate Matrix Market file.

    Duplicate entries are summed and explicit zeros are kept.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            header = fh.readline().decode("ascii", "replace").lower().split()
            if (
                len(header) != 5
                or header[0] != "%%matrixmarket"
                or header[1] != "matrix"
                or header[2] != "coordinate"
                or header[3] not in ("real", "integer")
                or header[4] != "general"
            ):
                raise MatrixMarketError(f"{path}: unsupported or malformed header {header!r}")
            fh.seek(0)
            M = scipy.io.mmread(fh)
    except MatrixMarketError:
        raise
    except (ValueError, IndexError) as exc:
        raise MatrixMarketError(f"{path}: {exc}") from exc
    M = sp.coo_matrix(M)
    return SparseMatrix.from_coo(M.row, M.col, M.data.astype(np.float64), M.shape)


def write_matrix_market(A, path):
    """Write ``A`` with round-trip float precision and 1-based indices."""
    rows = A.row_ids() + 1
    cols = A.col_indices + 1
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{A.nrows} {A.ncols} {A.nnz}\n")
        body = np.column_stack([rows, cols])
        for (i, j), v in zip(body.tolist(), A.values.tolist()):
            fh.write(f"{i} {j} {v!r}\n")
