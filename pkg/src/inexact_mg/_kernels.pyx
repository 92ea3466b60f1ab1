# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled CSR and dense triangular kernels.

Same surface as ``_kernels_py``; see that module for the contract.
"""

import numpy as np

cimport numpy as cnp

ctypedef cnp.int64_t idx_t


def csr_matvec(idx_t[::1] indptr, idx_t[::1] indices, double[::1] data,
               double[::1] x, double[::1] out):
    """out = A @ x for a CSR matrix A."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i
    cdef idx_t k
    cdef double acc
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        out[i] = acc


def csr_matvec_t(idx_t[::1] indptr, idx_t[::1] indices, double[::1] data,
                 double[::1] x, double[::1] out):
    """out = A.T @ x for a CSR matrix A, applied matrix-free."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i
    cdef idx_t k
    cdef double xi
    out[:] = 0.0
    for i in range(n):
        xi = x[i]
        for k in range(indptr[i], indptr[i + 1]):
            out[indices[k]] += data[k] * xi


def sgs_forward(idx_t[::1] indptr, idx_t[::1] indices, double[::1] data,
                double[::1] diag, double[::1] f, double[::1] v):
    """One forward Gauss-Seidel sweep on A v = f, updating v in place."""
    cdef Py_ssize_t n = f.shape[0]
    cdef Py_ssize_t i
    cdef idx_t k
    cdef double acc
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * v[indices[k]]
        v[i] += (f[i] - acc) / diag[i]


def sgs_backward(idx_t[::1] indptr, idx_t[::1] indices, double[::1] data,
                 double[::1] diag, double[::1] f, double[::1] v):
    """One backward Gauss-Seidel sweep on A v = f, updating v in place."""
    cdef Py_ssize_t n = f.shape[0]
    cdef Py_ssize_t i
    cdef idx_t k
    cdef double acc
    for i in range(n - 1, -1, -1):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * v[indices[k]]
        v[i] += (f[i] - acc) / diag[i]


def csr_matmat(idx_t[::1] a_indptr, idx_t[::1] a_indices, double[::1] a_data,
               idx_t[::1] b_indptr, idx_t[::1] b_indices, double[::1] b_data,
               Py_ssize_t n_cols):
    """CSR product C = A @ B with sorted columns and explicit zeros kept.

    Two passes over the rows of A with a dense marker/accumulator pair of
    length ``n_cols``: the first pass counts distinct columns per output
    row, the second gathers and sorts them.
    """
    cdef Py_ssize_t n_rows = a_indptr.shape[0] - 1
    cdef cnp.ndarray[idx_t, ndim=1] marker_arr = np.full(n_cols, -1, dtype=np.int64)
    cdef idx_t[::1] marker = marker_arr
    cdef cnp.ndarray[idx_t, ndim=1] indptr_arr = np.zeros(n_rows + 1, dtype=np.int64)
    cdef idx_t[::1] indptr = indptr_arr
    cdef Py_ssize_t i
    cdef idx_t k, j, col, nnz

    nnz = 0
    for i in range(n_rows):
        for k in range(a_indptr[i], a_indptr[i + 1]):
            for j in range(b_indptr[a_indices[k]], b_indptr[a_indices[k] + 1]):
                col = b_indices[j]
                if marker[col] != i:
                    marker[col] = i
                    nnz += 1
        indptr[i + 1] = nnz

    cdef cnp.ndarray[idx_t, ndim=1] indices_arr = np.empty(nnz, dtype=np.int64)
    cdef idx_t[::1] indices = indices_arr
    cdef cnp.ndarray[double, ndim=1] data_arr = np.empty(nnz, dtype=np.float64)
    cdef double[::1] data = data_arr
    cdef double[::1] acc = np.zeros(n_cols, dtype=np.float64)
    cdef idx_t head, t, u, cj
    cdef double av

    marker[:] = -1
    for i in range(n_rows):
        head = indptr[i]
        for k in range(a_indptr[i], a_indptr[i + 1]):
            av = a_data[k]
            for j in range(b_indptr[a_indices[k]], b_indptr[a_indices[k] + 1]):
                col = b_indices[j]
                acc[col] += av * b_data[j]
                if marker[col] != i:
                    marker[col] = i
                    indices[head] = col
                    head += 1
        # insertion sort of this row's column list, then drain the accumulator
        for t in range(indptr[i] + 1, head):
            cj = indices[t]
            u = t
            while u > indptr[i] and indices[u - 1] > cj:
                indices[u] = indices[u - 1]
                u -= 1
            indices[u] = cj
        for t in range(indptr[i], head):
            data[t] = acc[indices[t]]
            acc[indices[t]] = 0.0

    return indptr_arr, indices_arr, data_arr


def trsv_lower(double[:, ::1] L, double[::1] b, double[::1] out):
    """Solve L y = b for dense lower-triangular L."""
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = b[i]
        for j in range(i):
            acc -= L[i, j] * out[j]
        out[i] = acc / L[i, i]


def trsv_lower_t(double[:, ::1] L, double[::1] b, double[::1] out):
    """Solve L.T x = b for dense lower-triangular L."""
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n - 1, -1, -1):
        acc = b[i]
        for j in range(i + 1, n):
            acc -= L[j, i] * out[j]
        out[i] = acc / L[i, i]
