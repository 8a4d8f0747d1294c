"""Coordinate-format sparse matrices with deterministic matvec and Matrix Market I/O.

Entries are stored sorted row-major with duplicates summed at construction,
so the summation order of every product is reproducible across runs.
Instances are immutable by convention: no method mutates `rows`, `cols`
or `vals` after construction, which makes them safe to share across threads.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolationError, MatrixMarketParseError

_MM_HEADER = "%%MatrixMarket matrix coordinate real general"


class SparseMatrix:
    """Real sparse matrix in sorted COO form with a CSR row pointer."""

    __slots__ = ("nrows", "ncols", "rows", "cols", "vals", "indptr")

    def __init__(self, nrows, ncols, rows, cols, vals, sum_duplicates=True):
        """
        Args:
            nrows, ncols: matrix dimensions.
            rows, cols: integer index arrays, 0-based.
            vals: float values, same length as the index arrays.
            sum_duplicates: merge repeated (row, col) pairs by summing.
        """
        if nrows < 0 or ncols < 0:
            raise ContractViolationError("matrix dimensions must be non-negative")
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if not (rows.size == cols.size == vals.size):
            raise ContractViolationError("rows, cols, vals must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= nrows:
                raise ContractViolationError("row index out of range")
            if cols.min() < 0 or cols.max() >= ncols:
                raise ContractViolationError("col index out of range")
        key = rows * ncols + cols
        order = np.argsort(key, kind="stable")
        rows, cols, vals, key = rows[order], cols[order], vals[order], key[order]
        if rows.size and np.any(np.diff(key) == 0):
            if not sum_duplicates:
                raise ContractViolationError("duplicate (row, col) entries")
            uniq, inv = np.unique(key, return_inverse=True)
            vals = np.bincount(inv, weights=vals, minlength=uniq.size)
            rows = (uniq // ncols).astype(np.int64)
            cols = (uniq % ncols).astype(np.int64)
        self.nrows = int(nrows)
        self.ncols = int(ncols)
        self.rows = rows
        self.cols = cols
        self.vals = vals
        counts = np.bincount(rows, minlength=nrows) if nrows else np.zeros(0, np.int64)
        self.indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)

    @property
    def nnz(self):
        return self.vals.size

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    def matvec(self, v):
        """Sparse product M @ v with row-major summation order."""
        v = np.asarray(v)
        if v.shape != (self.ncols,):
            raise ContractViolationError(
                f"matvec expects length {self.ncols}, got {v.shape}"
            )
        contrib = self.vals * v[self.cols]
        return _group_sum(self.rows, contrib, self.nrows)

    def matvec_transpose(self, u):
        """Sparse product M.T @ u."""
        u = np.asarray(u)
        if u.shape != (self.nrows,):
            raise ContractViolationError(
                f"matvec_transpose expects length {self.nrows}, got {u.shape}"
            )
        contrib = self.vals * u[self.rows]
        return _group_sum(self.cols, contrib, self.ncols)

    def to_dense(self):
        out = np.zeros((self.nrows, self.ncols))
        out[self.rows, self.cols] = self.vals
        return out

    def scaled(self, factor):
        """New matrix with every stored value multiplied by `factor`."""
        return SparseMatrix(
            self.nrows, self.ncols, self.rows, self.cols, self.vals * factor,
            sum_duplicates=False,
        )

    def transpose(self):
        return SparseMatrix(
            self.ncols, self.nrows, self.cols, self.rows, self.vals,
            sum_duplicates=False,
        )

    def frobenius_norm_sq(self):
        return float(np.dot(self.vals, self.vals))

    def is_pattern_symmetric(self):
        if self.nrows != self.ncols:
            return False
        key = set(zip(self.rows.tolist(), self.cols.tolist()))
        return all((c, r) in key for r, c in key)

    def __add__(self, other):
        if self.shape != other.shape:
            raise ContractViolationError("shape mismatch in sparse addition")
        return SparseMatrix(
            self.nrows, self.ncols,
            np.concatenate([self.rows, other.rows]),
            np.concatenate([self.cols, other.cols]),
            np.concatenate([self.vals, other.vals]),
        )


def _group_sum(idx, w, n):
    """Deterministic segmented sum of `w` grouped by `idx` (complex-safe)."""
    if np.iscomplexobj(w):
        re = np.bincount(idx, weights=w.real, minlength=n)
        im = np.bincount(idx, weights=w.imag, minlength=n)
        return re + 1j * im
    return np.bincount(idx, weights=w, minlength=n)


def identity(n):
    idx = np.arange(n)
    return SparseMatrix(n, n, idx, idx, np.ones(n))


def from_dense(mat, tol=0.0):
    mat = np.asarray(mat, dtype=float)
    rows, cols = np.nonzero(np.abs(mat) > tol)
    return SparseMatrix(mat.shape[0], mat.shape[1], rows, cols, mat[rows, cols])


def write_matrix_market(m: SparseMatrix, path):
    """Write coordinate-format Matrix Market (1-based indices on disk)."""
    with open(path, "w") as fh:
        fh.write(_MM_HEADER + "\n")
        fh.write(f"{m.nrows} {m.ncols} {m.nnz}\n")
        for r, c, v in zip(m.rows, m.cols, m.vals):
            fh.write(f"{r + 1} {c + 1} {float(v)!r}\n")


def read_matrix_market(path) -> SparseMatrix:
    """Parse a coordinate real general Matrix Market file.

    Raises MatrixMarketParseError with the 1-based line number on any
    malformed header, bad token count or out-of-range index.
    """
    with open(path) as fh:
        header = fh.readline()
        if not header:
            raise MatrixMarketParseError("empty file", 1)
        tokens = header.strip().lower().split()
        want = _MM_HEADER.lower().split()
        if tokens[:1] != want[:1] or tokens[1:] != want[1:]:
            raise MatrixMarketParseError(
                f"unsupported header {header.strip()!r}; "
                f"expected {_MM_HEADER!r}", 1,
            )
        lineno = 1
        dims = None
        rows, cols, vals = [], [], []
        for line in fh:
            lineno += 1
            stripped = line.strip()
            if not stripped or stripped.startswith("%"):
                continue
            parts = stripped.split()
            if dims is None:
                if len(parts) != 3:
                    raise MatrixMarketParseError("size line needs 3 integers", lineno)
                try:
                    nrows, ncols, nnz = (int(p) for p in parts)
                except ValueError:
                    raise MatrixMarketParseError("size line needs 3 integers", lineno)
                dims = (nrows, ncols, nnz)
                continue
            if len(parts) != 3:
                raise MatrixMarketParseError("entry line needs 'i j value'", lineno)
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise MatrixMarketParseError("entry line needs 'i j value'", lineno)
            if not (1 <= i <= dims[0]) or not (1 <= j <= dims[1]):
                raise MatrixMarketParseError(
                    f"index ({i}, {j}) outside 1-based range "
                    f"({dims[0]}, {dims[1]})", lineno,
                )
            rows.append(i - 1)
            cols.append(j - 1)
            vals.append(v)
    if dims is None:
        raise MatrixMarketParseError("missing size line", lineno)
    if len(vals) != dims[2]:
        raise MatrixMarketParseError(
            f"expected {dims[2]} entries, found {len(vals)}", lineno,
        )
    return SparseMatrix(dims[0], dims[1], rows, cols, vals)
