"""Sparse core: CSR container, products, Cholesky, power iteration."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from inexact_mg.linalg import (
    DenseCholesky,
    EigenEstimate,
    NotSpdError,
    SparseMatrix,
    a_inner,
    a_norm,
    cholesky_factor,
    cholesky_solve,
    lambda_min_spd,
    power_method_largest,
    read_matrix_market,
    spmv,
    spmv_transpose,
    transpose,
    triple_product,
    write_matrix_market,
)


def random_sparse(rng, nrows, ncols, density=0.3):
    """Random CSR with some empty rows and unsorted duplicate input."""
    nnz = max(1, int(density * nrows * ncols))
    rows = rng.integers(0, nrows, size=nnz)
    cols = rng.integers(0, ncols, size=nnz)
    vals = rng.standard_normal(nnz)
    return SparseMatrix.from_coo(rows, cols, vals, nrows, ncols)


def random_spd(rng, n, spread=100.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.geomspace(1.0, spread, n)
    return q @ np.diag(lam) @ q.T, lam


class TestSparseMatrix:
    def test_from_coo_sums_duplicates(self):
        A = SparseMatrix.from_coo([0, 0, 1], [1, 1, 0], [2.0, 3.0, 4.0], 2, 2)
        npt.assert_array_equal(A.to_dense(), [[0.0, 5.0], [4.0, 0.0]])

    def test_from_dense_roundtrip(self, rng):
        for _ in range(10):
            d = rng.standard_normal((5, 7))
            d[rng.random((5, 7)) < 0.5] = 0.0
            npt.assert_array_equal(SparseMatrix.from_dense(d).to_dense(), d)

    def test_identity(self):
        I = SparseMatrix.identity(4)
        x = np.arange(4.0)
        npt.assert_array_equal(spmv(I, x), x)

    def test_validation_rejects_bad_offsets(self):
        with pytest.raises(ValueError):
            SparseMatrix(2, 2, np.array([0, 2, 1]), np.array([0, 1]),
                         np.array([1.0, 1.0]))

    def test_validation_rejects_column_out_of_range(self):
        with pytest.raises(ValueError):
            SparseMatrix(1, 2, np.array([0, 1]), np.array([2]), np.array([1.0]))

    def test_diagonal(self):
        A = SparseMatrix.from_dense(np.array([[3.0, 1.0], [0.0, -2.0]]))
        npt.assert_array_equal(A.diagonal(), [3.0, -2.0])


class TestProducts:
    def test_spmv_known_2x2(self):
        A = SparseMatrix.from_dense(np.array([[1.0, 2.0], [3.0, 4.0]]))
        npt.assert_array_equal(spmv(A, np.array([1.0, 1.0])), [3.0, 7.0])

    def test_spmv_zero_matrix_empty_rows(self):
        A = SparseMatrix(3, 3, np.zeros(4, dtype=np.int64),
                         np.zeros(0, dtype=np.int64), np.zeros(0))
        npt.assert_array_equal(spmv(A, np.ones(3)), np.zeros(3))

    def test_spmv_matches_dense(self, rng):
        for _ in range(20):
            nr, nc = rng.integers(1, 40, size=2)
            A = random_sparse(rng, nr, nc)
            x = rng.standard_normal(nc)
            npt.assert_allclose(spmv(A, x), A.to_dense() @ x, rtol=1e-13, atol=1e-13)

    def test_spmv_transpose_matches_dense(self, rng):
        for _ in range(20):
            nr, nc = rng.integers(1, 40, size=2)
            A = random_sparse(rng, nr, nc)
            y = rng.standard_normal(nr)
            npt.assert_allclose(spmv_transpose(A, y), A.to_dense().T @ y,
                                rtol=1e-13, atol=1e-13)

    def test_transpose_dense(self, rng):
        A = random_sparse(rng, 9, 5)
        npt.assert_array_equal(transpose(A).to_dense(), A.to_dense().T)

    def test_transpose_involution(self, rng):
        A = random_sparse(rng, 6, 8)
        B = transpose(transpose(A))
        npt.assert_array_equal(B.to_dense(), A.to_dense())

    def test_triple_product_matches_dense(self, rng):
        for _ in range(10):
            n, m = int(rng.integers(2, 25)), int(rng.integers(1, 12))
            Ad, _ = random_spd(rng, n)
            A = SparseMatrix.from_dense(Ad)
            P = random_sparse(rng, n, m, density=0.4)
            C = triple_product(P, A)
            npt.assert_allclose(C.to_dense(), P.to_dense().T @ Ad @ P.to_dense(),
                                rtol=1e-12, atol=1e-12)

    def test_triple_product_exactly_symmetric(self, rng):
        Ad, _ = random_spd(rng, 20)
        A = SparseMatrix.from_dense(Ad)
        P = random_sparse(rng, 20, 9, density=0.4)
        C = triple_product(P, A)
        Ct = transpose(C)
        npt.assert_array_equal(C.row_offsets, Ct.row_offsets)
        npt.assert_array_equal(C.col_indices, Ct.col_indices)
        npt.assert_array_equal(C.values, Ct.values)


class TestNorms:
    def test_a_norm_quadratic_forms(self, rng):
        Ad, _ = random_spd(rng, 15)
        A = SparseMatrix.from_dense(Ad)
        for _ in range(100):
            x = rng.standard_normal(15)
            npt.assert_allclose(a_norm(A, x), math.sqrt(x @ Ad @ x), rtol=1e-12)

    def test_a_inner_symmetry(self, rng):
        Ad, _ = random_spd(rng, 10)
        A = SparseMatrix.from_dense(Ad)
        x, y = rng.standard_normal((2, 10))
        npt.assert_allclose(a_inner(A, x, y), a_inner(A, y, x), rtol=1e-12)

    def test_a_norm_rejects_indefinite(self):
        A = SparseMatrix.from_dense(np.diag([1.0, -1.0]))
        with pytest.raises(NotSpdError):
            a_norm(A, np.array([0.1, 1.0]))


class TestCholesky:
    def test_known_2x2_solve(self):
        A = SparseMatrix.from_dense(np.array([[2.0, -1.0], [-1.0, 2.0]]))
        F = cholesky_factor(A)
        x = cholesky_solve(F, np.array([1.0, 0.0]))
        npt.assert_allclose(x, [2.0 / 3.0, 1.0 / 3.0], rtol=1e-14)

    def test_matches_numpy_solve(self, rng):
        for _ in range(10):
            n = int(rng.integers(1, 30))
            Ad, _ = random_spd(rng, n)
            F = cholesky_factor(SparseMatrix.from_dense(Ad))
            f = rng.standard_normal(n)
            npt.assert_allclose(cholesky_solve(F, f), np.linalg.solve(Ad, f),
                                rtol=1e-9, atol=1e-12)

    def test_rejects_indefinite(self):
        A = SparseMatrix.from_dense(np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(NotSpdError):
            cholesky_factor(A)

    def test_rejects_nonsymmetric(self):
        A = SparseMatrix.from_dense(np.array([[2.0, 1.0], [0.0, 2.0]]))
        with pytest.raises(NotSpdError):
            cholesky_factor(A)

    def test_dimension_cap(self):
        A = SparseMatrix.identity(5)
        with pytest.raises(ValueError, match="over cap"):
            cholesky_factor(A, max_dim=4)


def tridiag_toeplitz(n):
    d = np.full(n, 2.0)
    o = np.full(n - 1, -1.0)
    return SparseMatrix.from_dense(np.diag(d) + np.diag(o, 1) + np.diag(o, -1))


class TestEigenEstimates:
    def test_power_method_diagonal(self):
        A = SparseMatrix.from_dense(np.diag([1.0, 5.0, 3.0]))
        est = power_method_largest(lambda x: spmv(A, x), 3)
        assert est.converged
        npt.assert_allclose(est.value, 5.0, rtol=1e-5)

    def test_power_method_zero_operator(self):
        est = power_method_largest(lambda x: np.zeros_like(x), 4)
        assert est.value == 0.0 and est.converged

    def test_power_method_random_spd(self, rng):
        for _ in range(5):
            n = int(rng.integers(3, 40))
            Ad, lam = random_spd(rng, n)
            A = SparseMatrix.from_dense(Ad)
            est = power_method_largest(lambda x: spmv(A, x), n, tol=1e-8)
            npt.assert_allclose(est.value, lam[-1], rtol=1e-5)

    def test_lambda_min_tridiagonal(self):
        # smallest eigenvalue of the n=10 second-difference matrix
        A = tridiag_toeplitz(10)
        F = cholesky_factor(A)
        est = lambda_min_spd(A, F, tol=1e-9)
        npt.assert_allclose(est.value, 4.0 * math.sin(math.pi / 22.0) ** 2,
                            rtol=1e-6)

    def test_custom_inner_product(self, rng):
        Ad, lam = random_spd(rng, 12)
        A = SparseMatrix.from_dense(Ad)
        # for self-adjoint operators the A-inner iteration finds the same value
        est = power_method_largest(
            lambda x: spmv(A, x), 12, inner=lambda x, y: a_inner(A, x, y),
            tol=1e-8,
        )
        npt.assert_allclose(est.value, lam[-1], rtol=1e-4)

    def test_estimate_fields(self):
        est = EigenEstimate(1.0, 3, True, 1e-8)
        assert est.iterations == 3 and est.residual == 1e-8


class TestMatrixMarket:
    def test_roundtrip(self, tmp_path, rng):
        A = random_sparse(rng, 7, 4)
        path = tmp_path / "a.mtx"
        write_matrix_market(A, path)
        B = read_matrix_market(path)
        assert (B.nrows, B.ncols) == (7, 4)
        npt.assert_array_equal(B.to_dense(), A.to_dense())

    def test_one_based_indices(self, tmp_path):
        A = SparseMatrix.from_dense(np.array([[0.0, 1.5], [0.0, 0.0]]))
        path = tmp_path / "a.mtx"
        write_matrix_market(A, path)
        body = [l for l in path.read_text().splitlines() if not l.startswith("%")]
        assert body[0].split() == ["2", "2", "1"]
        assert body[1].split()[:2] == ["1", "2"]
