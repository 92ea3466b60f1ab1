"""Pure-NumPy fallbacks for the compiled kernels.

Mirrors the call signatures of the Cython module ``_kernels``.  The
backend module picks one of the two at import time; everything above it
is written against this common surface.

CSR arrays are ``int64`` offsets/indices and ``float64`` values
throughout.  Dense triangular factors are C-contiguous ``float64``.
"""

import numpy as np

__all__ = [
    "csr_matvec",
    "csr_matvec_t",
    "sgs_forward",
    "sgs_backward",
    "csr_matmat",
    "trsv_lower",
    "trsv_lower_t",
    "coo_to_csr",
]


def csr_matvec(indptr, indices, data, x, out):
    """out = A @ x for a CSR matrix A."""
    # reduceat cannot express empty segments directly (it would grab the
    # element at the boundary), so reduce over nonempty rows only.
    out[:] = 0.0
    if data.shape[0] == 0:
        return
    products = data * x[indices]
    nonempty = indptr[:-1] < indptr[1:]
    out[nonempty] = np.add.reduceat(products, indptr[:-1][nonempty])


def csr_matvec_t(indptr, indices, data, x, out):
    """out = A.T @ x for a CSR matrix A, applied matrix-free."""
    out[:] = 0.0
    if data.shape[0] == 0:
        return
    nrows = indptr.shape[0] - 1
    rows = np.repeat(np.arange(nrows, dtype=np.int64), np.diff(indptr))
    np.add.at(out, indices, data * x[rows])


def sgs_forward(indptr, indices, data, diag, f, v):
    """One forward Gauss-Seidel sweep on A v = f, updating v in place."""
    for i in range(f.shape[0]):
        s, e = indptr[i], indptr[i + 1]
        acc = data[s:e] @ v[indices[s:e]]
        v[i] += (f[i] - acc) / diag[i]


def sgs_backward(indptr, indices, data, diag, f, v):
    """One backward Gauss-Seidel sweep on A v = f, updating v in place."""
    for i in range(f.shape[0] - 1, -1, -1):
        s, e = indptr[i], indptr[i + 1]
        acc = data[s:e] @ v[indices[s:e]]
        v[i] += (f[i] - acc) / diag[i]


def csr_matmat(a_indptr, a_indices, a_data, b_indptr, b_indices, b_data, n_cols):
    """CSR product C = A @ B.

    Expands every entry of A against the matching row of B, then
    collapses duplicate (row, col) pairs.  Entries that cancel to zero
    are kept as explicit zeros.

    Returns
    -------
    (indptr, indices, data) of C with sorted column indices per row.
    """
    n_rows = a_indptr.shape[0] - 1
    counts = np.diff(a_indptr)
    a_rows = np.repeat(np.arange(n_rows, dtype=np.int64), counts)
    seg_len = b_indptr[a_indices + 1] - b_indptr[a_indices]
    total = int(seg_len.sum())
    if total == 0:
        return (
            np.zeros(n_rows + 1, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.float64),
        )
    starts = np.repeat(b_indptr[a_indices], seg_len)
    offsets = np.arange(total, dtype=np.int64) - np.repeat(
        np.cumsum(seg_len) - seg_len, seg_len
    )
    pos = starts + offsets
    rows = np.repeat(a_rows, seg_len)
    cols = b_indices[pos]
    vals = np.repeat(a_data, seg_len) * b_data[pos]
    return coo_to_csr(rows, cols, vals, n_rows)


def coo_to_csr(rows, cols, vals, n_rows):
    """Sort COO triplets, sum duplicates, return CSR arrays.

    Duplicates are summed, not dropped: a sum that comes out exactly
    zero stays in the sparsity pattern.
    """
    order = np.lexsort((cols, rows))
    rows = np.asarray(rows, dtype=np.int64)[order]
    cols = np.asarray(cols, dtype=np.int64)[order]
    vals = np.asarray(vals, dtype=np.float64)[order]
    keep = np.empty(rows.shape[0], dtype=bool)
    keep[0] = True
    keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    (starts,) = np.nonzero(keep)
    data = np.add.reduceat(vals, starts)
    indices = cols[keep]
    row_counts = np.bincount(rows[keep], minlength=n_rows)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(row_counts, out=indptr[1:])
    return indptr, indices, data


def trsv_lower(L, b, out):
    """Solve L y = b for dense lower-triangular L."""
    n = b.shape[0]
    for i in range(n):
        out[i] = (b[i] - L[i, :i] @ out[:i]) / L[i, i]


def trsv_lower_t(L, b, out):
    """Solve L.T x = b for dense lower-triangular L."""
    n = b.shape[0]
    for i in range(n - 1, -1, -1):
        out[i] = (b[i] - L[i + 1 :, i] @ out[i + 1 :]) / L[i, i]
