"""Sparse matrices and a direct solver for the slab systems.

Matrices are :class:`scipy.sparse.csr_matrix` in canonical form (sorted
column indices, no duplicates); factorization is SuperLU with partial
pivoting.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np
import scipy.linalg
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SparseMatrix = sp.csr_matrix

RESIDUAL_TOL = 1e-10
_DENSE_PIVOT_SEARCH = 3000


class SingularSystemError(ArithmeticError):
    """Raised when a system matrix is structurally or numerically singular.

    ``pivot`` is the row (equation) index where elimination broke down, or
    ``None`` if it could not be determined.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message if pivot is None else f"{message} (pivot {pivot})")
        self.pivot = pivot


def csr_from_coo(rows, cols, vals, shape) -> SparseMatrix:
    """Compress coordinate triplets, summing duplicates."""
    A = sp.coo_matrix((np.asarray(vals, dtype=float).ravel(),
                       (np.asarray(rows).ravel(), np.asarray(cols).ravel())),
                      shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def as_csr(A) -> SparseMatrix:
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} times {x.shape}")
    return np.asarray(A @ x)


def _find_pivot(A) -> int | None:
    A = sp.csr_matrix(A)
    empty_rows = np.flatnonzero(np.diff(A.indptr) == 0)
    if len(empty_rows):
        return int(empty_rows[0])
    empty_cols = np.setdiff1d(np.arange(A.shape[1]), A.indices)
    if len(empty_cols):
        return int(empty_cols[0])
    if A.shape[0] <= _DENSE_PIVOT_SEARCH:
        _, _, u = scipy.linalg.lu(A.toarray())
        d = np.abs(np.diag(u))
        bad = np.flatnonzero(d <= 1e-14 * max(d.max(), 1.0))
        if len(bad):
            return int(bad[0])
    return None


class Factorization:
    """LU factors of a square sparse matrix, reusable for many right-hand sides."""

    def __init__(self, A):
        A = as_csr(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.A = A
        self.n = A.shape[0]
        if self.n == 0:
            self._lu = None
            return
        try:
            self._lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise SingularSystemError(str(exc), _find_pivot(A)) from None
        d = np.abs(self._lu.U.diagonal())
        scale = max(d.max(), np.abs(A.data).max() if A.nnz else 0.0)
        bad = np.flatnonzero(d <= 1e-15 * scale)
        if len(bad):
            raise SingularSystemError("numerically singular matrix",
                                      int(self._lu.perm_c[bad[0]]))

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: {self.n} vs {b.shape}")
        if self.n == 0:
            return b.copy()
        x = self._lu.solve(b)
        bnorm = max(1.0, np.abs(b).max())
        r = b - self.A @ x
        if np.abs(r).max() > RESIDUAL_TOL * bnorm:
            x = x + self._lu.solve(r)
        if not np.isfinite(x).all():
            raise SingularSystemError("non-finite solution")
        return x


def solve(A, b) -> np.ndarray:
    """Solve ``A x = b`` by sparse LU."""
    return Factorization(A).solve(b)


def write_matrix_market(path, A, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


class BoundedCache(OrderedDict):
    """Dict that keeps only the ``maxsize`` most recently used entries.

    The solvers sweep the slabs in order, so consecutive slabs sharing a mesh
    reuse operators while memory stays bounded on long adaptive runs.
    """

    def __init__(self, maxsize: int = 4):
        super().__init__()
        self.maxsize = maxsize

    def get(self, key, default=None):
        if key in self:
            self.move_to_end(key)
            return self[key]
        return default

    def __setitem__(self, key, value):
        super().__setitem__(key, value)
        self.move_to_end(key)
        while len(self) > self.maxsize:
            self.popitem(last=False)
