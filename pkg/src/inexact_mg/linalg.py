"""Sparse CSR containers, energy-norm helpers and spectral estimates.

Everything the solver layers need from linear algebra lives here: a
minimal immutable CSR matrix, matrix-vector and triple products, the
A-weighted inner product, a dense Cholesky wrapper for the coarsest
level, and power-iteration eigenvalue estimates.  Heavy loops are
delegated to :mod:`inexact_mg.backend`.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from ._kernels_py import coo_to_csr

__all__ = [
    "NotSpdError",
    "PowerIterationError",
    "SparseMatrix",
    "DenseCholesky",
    "EigenEstimate",
    "spmv",
    "spmv_transpose",
    "transpose",
    "triple_product",
    "a_inner",
    "a_norm",
    "cholesky_factor",
    "cholesky_solve",
    "power_method_largest",
    "lambda_min_spd",
    "read_matrix_market",
    "write_matrix_market",
]


class NotSpdError(ValueError):
    """Raised when a matrix that must be SPD turns out not to be."""


class PowerIterationError(RuntimeError):
    """Raised when power iteration cannot produce a usable start vector."""


def _as_f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


@dataclass
class SparseMatrix:
    """Square or rectangular sparse matrix in CSR form.

    Treated as immutable after construction.  ``row_offsets`` has length
    ``nrows + 1``; column indices are sorted and unique within each row.
    Explicitly stored zeros are legal and preserved by all operations,
    so the sparsity pattern of assembled operators never depends on
    coefficient values.
    """

    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _diag: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.row_offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        self.values = _as_f64(self.values)
        self.validate()

    def validate(self):
        """Check the CSR invariants, raising ValueError on violation."""
        if self.nrows < 0 or self.ncols < 0:
            raise ValueError("negative matrix dimension")
        if self.row_offsets.shape[0] != self.nrows + 1:
            raise ValueError("row_offsets must have length nrows + 1")
        if self.row_offsets[0] != 0 or self.row_offsets[-1] != self.nnz:
            raise ValueError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if self.col_indices.shape[0] != self.values.shape[0]:
            raise ValueError("col_indices and values length mismatch")
        if self.nnz:
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.ncols:
                raise ValueError("column index out of range")
            rows = np.repeat(
                np.arange(self.nrows, dtype=np.int64), np.diff(self.row_offsets)
            )
            same_row = rows[1:] == rows[:-1]
            if np.any(same_row & (np.diff(self.col_indices) <= 0)):
                raise ValueError("column indices must be sorted and unique per row")

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def nnz(self):
        return self.values.shape[0]

    @classmethod
    def from_coo(cls, rows, cols, vals, nrows, ncols):
        """Build from COO triplets; duplicate entries are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if rows.size == 0:
            return cls(
                nrows, ncols, np.zeros(nrows + 1, np.int64), np.empty(0, np.int64),
                np.empty(0),
            )
        if rows.min() < 0 or rows.max() >= nrows:
            raise ValueError("row index out of range")
        if cols.min() < 0 or cols.max() >= ncols:
            raise ValueError("column index out of range")
        indptr, indices, data = coo_to_csr(rows, cols, vals, nrows)
        return cls(nrows, ncols, indptr, indices, data)

    @classmethod
    def from_dense(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        rows, cols = np.nonzero(arr)
        return cls.from_coo(rows, cols, arr[rows, cols], arr.shape[0], arr.shape[1])

    @classmethod
    def identity(cls, n):
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    def to_dense(self):
        out = np.zeros((self.nrows, self.ncols))
        rows = np.repeat(np.arange(self.nrows), np.diff(self.row_offsets))
        out[rows, self.col_indices] = self.values
        return out

    def diagonal(self):
        """Stored diagonal entries (0.0 where absent from the pattern)."""
        if self._diag is None:
            rows = np.repeat(
                np.arange(self.nrows, dtype=np.int64), np.diff(self.row_offsets)
            )
            mask = rows == self.col_indices
            d = np.zeros(self.nrows)
            d[rows[mask]] = self.values[mask]
            self._diag = d
        return self._diag


def spmv(A, x):
    """Return A @ x."""
    x = _as_f64(x)
    if x.shape[0] != A.ncols:
        raise ValueError(f"spmv: vector length {x.shape[0]} != ncols {A.ncols}")
    out = np.empty(A.nrows)
    backend.csr_matvec(A.row_offsets, A.col_indices, A.values, x, out)
    return out


def spmv_transpose(A, x):
    """Return A.T @ x without forming the transpose."""
    x = _as_f64(x)
    if x.shape[0] != A.nrows:
        raise ValueError(f"spmv_transpose: vector length {x.shape[0]} != nrows {A.nrows}")
    out = np.empty(A.ncols)
    backend.csr_matvec_t(A.row_offsets, A.col_indices, A.values, x, out)
    return out


def transpose(A):
    """Explicit CSR transpose (exact permutation of the stored entries)."""
    rows = np.repeat(np.arange(A.nrows, dtype=np.int64), np.diff(A.row_offsets))
    order = np.lexsort((rows, A.col_indices))
    counts = np.bincount(A.col_indices, minlength=A.ncols)
    indptr = np.zeros(A.ncols + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return SparseMatrix(A.ncols, A.nrows, indptr, rows[order], A.values[order])


def _matmat(A, B):
    if A.ncols != B.nrows:
        raise ValueError("matmat: inner dimensions do not match")
    indptr, indices, data = backend.csr_matmat(
        A.row_offsets, A.col_indices, A.values,
        B.row_offsets, B.col_indices, B.values, B.ncols,
    )
    return SparseMatrix(A.nrows, B.ncols, indptr, indices, data)


def triple_product(P, A):
    """Galerkin product P.T @ A @ P, symmetrized by averaging.

    The product is built sparsely as P.T times (A P).  Averaging with
    the transpose removes the tiny roundoff asymmetry of the two-step
    product; for structurally symmetric A the pattern already matches,
    so the averaged values are exactly symmetric in floating point.
    """
    if A.nrows != A.ncols or P.nrows != A.nrows:
        raise ValueError("triple_product: need square A with A.nrows == P.nrows")
    C = _matmat(_matmat(transpose(P), A), P)
    Ct = transpose(C)
    rows = np.repeat(np.arange(C.nrows, dtype=np.int64), np.diff(C.row_offsets))
    rows_t = np.repeat(np.arange(Ct.nrows, dtype=np.int64), np.diff(Ct.row_offsets))
    indptr, indices, data = coo_to_csr(
        np.concatenate([rows, rows_t]),
        np.concatenate([C.col_indices, Ct.col_indices]),
        np.concatenate([0.5 * C.values, 0.5 * Ct.values]),
        C.nrows,
    )
    return SparseMatrix(C.nrows, C.ncols, indptr, indices, data)


def a_inner(A, x, y):
    """Inner product x.T @ A @ y."""
    return float(np.dot(_as_f64(x), spmv(A, y)))


def a_norm(A, x):
    """Energy norm sqrt(x.T A x) of x.

    A clearly negative quadratic form (beyond roundoff scale) means A is
    not SPD and raises :class:`NotSpdError`.
    """
    x = _as_f64(x)
    qf = a_inner(A, x, x)
    if qf < 0.0:
        scale = float(np.abs(A.values).max()) if A.nnz else 0.0
        if qf < -1.0e-14 * float(np.dot(x, x)) * scale:
            raise NotSpdError(f"negative quadratic form {qf:.3e}; matrix is not SPD")
        qf = 0.0
    return math.sqrt(qf)


@dataclass
class DenseCholesky:
    """Lower-triangular Cholesky factor of a dense SPD matrix."""

    dim: int
    lower: np.ndarray


def cholesky_factor(A, max_dim=20000):
    """Dense Cholesky factorization of a sparse or dense SPD matrix.

    Parameters
    ----------
    A : SparseMatrix or ndarray
        Symmetric positive definite matrix; a SparseMatrix is densified.
    max_dim : int
        Refuse matrices above this dimension (densifying them would be a
        configuration mistake, not a numerical one).
    """
    if isinstance(A, SparseMatrix):
        if A.nrows != A.ncols:
            raise ValueError("cholesky_factor: matrix must be square")
        if A.nrows > max_dim:
            raise ValueError(
                f"coarse problem too large for direct solver: dim {A.nrows} over cap {max_dim}"
            )
        dense = A.to_dense()
    else:
        dense = np.asarray(A, dtype=np.float64)
        if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
            raise ValueError("cholesky_factor: matrix must be square")
        if dense.shape[0] > max_dim:
            raise ValueError(
                f"coarse problem too large for direct solver: dim {dense.shape[0]} over cap {max_dim}"
            )
    scale = np.abs(dense).max() if dense.size else 0.0
    if not np.all(np.abs(dense - dense.T) <= 1.0e-12 * scale):
        raise NotSpdError("cholesky_factor: matrix is not symmetric")
    try:
        lower = np.linalg.cholesky(dense)
    except np.linalg.LinAlgError as exc:
        raise NotSpdError(f"cholesky_factor: {exc}") from exc
    return DenseCholesky(dense.shape[0], np.ascontiguousarray(lower))


def cholesky_solve(F, b):
    """Solve A x = b given the DenseCholesky factor of A."""
    b = _as_f64(b)
    if b.shape[0] != F.dim:
        raise ValueError("cholesky_solve: right-hand side has wrong length")
    y = np.empty(F.dim)
    backend.trsv_lower(F.lower, b, y)
    x = np.empty(F.dim)
    backend.trsv_lower_t(F.lower, y, x)
    return x


@dataclass
class EigenEstimate:
    """Result of a power-iteration eigenvalue estimate.

    ``residual`` is the relative change of the Rayleigh quotient at
    termination, the quantity the stopping test is based on.
    """

    value: float
    iterations: int
    converged: bool
    residual: float


def power_method_largest(op, dim, inner=None, tol=1.0e-6, max_iter=5000, seed=0):
    """Estimate the largest eigenvalue of a self-adjoint PSD operator.

    Parameters
    ----------
    op : callable
        Maps a vector to the operator applied to it.  Must be
        self-adjoint and positive semidefinite with respect to ``inner``.
    dim : int
        Vector length the operator acts on.
    inner : callable, optional
        Inner product ``(x, y) -> float``; Euclidean when omitted.
    tol : float
        Stop when the Rayleigh quotient changes by less than ``tol``
        relatively between iterations.
    max_iter : int
        Iteration cap; hitting it returns ``converged=False``.
    seed : int
        Seed for the random start vector, making runs reproducible.

    Returns
    -------
    EigenEstimate
    """
    if inner is None:
        inner = lambda x, y: float(np.dot(x, y))
    rng = np.random.default_rng(seed)
    for _ in range(3):
        v = rng.standard_normal(dim)
        nrm2 = inner(v, v)
        if nrm2 <= 0.0:
            continue
        v = v / math.sqrt(nrm2)
        lam_prev = None
        change = math.inf
        lam = 0.0
        for it in range(1, max_iter + 1):
            w = op(v)
            lam = inner(v, w)
            wn2 = inner(w, w)
            if wn2 <= 0.0:
                # operator annihilated the iterate: largest eigenvalue 0
                return EigenEstimate(0.0, it, True, 0.0)
            if lam_prev is not None:
                change = abs(lam - lam_prev) / max(abs(lam), 1.0e-300)
                if change <= tol:
                    return EigenEstimate(max(lam, 0.0), it, True, change)
            lam_prev = lam
            v = w / math.sqrt(wn2)
        return EigenEstimate(max(lam, 0.0), max_iter, False, change)
    raise PowerIterationError("power iteration: start vector degenerated in 3 restarts")


def lambda_min_spd(A, F, tol=1.0e-6, max_iter=5000, seed=0):
    """Smallest eigenvalue of an SPD matrix via inverse power iteration.

    Runs the power method on the inverse (applied through the Cholesky
    factor ``F``) and returns the reciprocal of its largest eigenvalue.
    """
    if A.nrows != F.dim:
        raise ValueError("lambda_min_spd: matrix and factor dimensions differ")
    est = power_method_largest(
        lambda v: cholesky_solve(F, v), F.dim, tol=tol, max_iter=max_iter, seed=seed
    )
    if est.value <= 0.0:
        raise NotSpdError("lambda_min_spd: nonpositive inverse eigenvalue estimate")
    return EigenEstimate(1.0 / est.value, est.iterations, est.converged, est.residual)


def write_matrix_market(A, path):
    """Write a SparseMatrix in MatrixMarket coordinate format (1-based)."""
    rows = np.repeat(np.arange(A.nrows, dtype=np.int64), np.diff(A.row_offsets))
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{A.nrows} {A.ncols} {A.nnz}\n")
        for i, j, v in zip(rows, A.col_indices, A.values):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def read_matrix_market(path):
    """Read a MatrixMarket coordinate file into a SparseMatrix."""
    with open(path) as fh:
        header = fh.readline()
        if "matrixmarket" not in header.lower() or "coordinate" not in header.lower():
            raise ValueError("not a MatrixMarket coordinate file")
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        nrows, ncols, nnz = (int(t) for t in line.split())
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz)
        for k in range(nnz):
            i, j, v = fh.readline().split()
            rows[k] = int(i) - 1
            cols[k] = int(j) - 1
            vals[k] = float(v)
    return SparseMatrix.from_coo(rows, cols, vals, nrows, ncols)
