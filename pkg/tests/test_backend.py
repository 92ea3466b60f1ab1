"""Compiled kernels against the NumPy fallbacks, and backend selection."""

import os
import subprocess
import sys

import numpy as np
import numpy.testing as npt
import pytest

from inexact_mg import backend, fem

needs_compiled = pytest.mark.skipif(
    not backend.HAVE_COMPILED, reason="compiled extension not built"
)


def random_csr(rng, nrows, ncols, max_per_row=6):
    """Random CSR arrays, some rows deliberately empty."""
    indptr = [0]
    indices = []
    for _ in range(nrows):
        k = int(rng.integers(0, min(max_per_row, ncols) + 1))
        cols = np.sort(rng.choice(ncols, size=k, replace=False))
        indices.extend(cols.tolist())
        indptr.append(len(indices))
    data = rng.standard_normal(len(indices))
    return (
        np.asarray(indptr, dtype=np.int64),
        np.asarray(indices, dtype=np.int64),
        np.asarray(data, dtype=np.float64),
    )


def csr_to_dense(indptr, indices, data, ncols):
    dense = np.zeros((indptr.shape[0] - 1, ncols))
    for i in range(dense.shape[0]):
        for p in range(indptr[i], indptr[i + 1]):
            dense[i, indices[p]] += data[p]
    return dense


def stiffness_arrays(m=8):
    A = fem.assemble_stiffness(m, fem.Coefficient.constant(1.0))
    return A.row_offsets, A.col_indices, A.values, A.diagonal(), A.nrows


@needs_compiled
class TestKernelEquivalence:
    def test_matvec(self, rng):
        for _ in range(10):
            nrows, ncols = rng.integers(1, 40, size=2)
            indptr, indices, data = random_csr(rng, nrows, ncols)
            x = rng.standard_normal(ncols)
            out_c = np.empty(nrows)
            out_f = np.empty(nrows)
            backend.compiled.csr_matvec(indptr, indices, data, x, out_c)
            backend.fallback.csr_matvec(indptr, indices, data, x, out_f)
            npt.assert_allclose(out_c, out_f, rtol=1e-13, atol=1e-14)
            dense = csr_to_dense(indptr, indices, data, ncols)
            npt.assert_allclose(out_c, dense @ x, rtol=1e-12, atol=1e-13)

    def test_matvec_transpose(self, rng):
        for _ in range(10):
            nrows, ncols = rng.integers(1, 40, size=2)
            indptr, indices, data = random_csr(rng, nrows, ncols)
            x = rng.standard_normal(nrows)
            out_c = np.empty(ncols)
            out_f = np.empty(ncols)
            backend.compiled.csr_matvec_t(indptr, indices, data, x, out_c)
            backend.fallback.csr_matvec_t(indptr, indices, data, x, out_f)
            npt.assert_allclose(out_c, out_f, rtol=1e-13, atol=1e-14)
            dense = csr_to_dense(indptr, indices, data, ncols)
            npt.assert_allclose(out_c, dense.T @ x, rtol=1e-12, atol=1e-13)

    @pytest.mark.parametrize("name", ["sgs_forward", "sgs_backward"])
    def test_gauss_seidel_sweeps(self, name, rng):
        indptr, indices, data, diag, n = stiffness_arrays()
        f = rng.standard_normal(n)
        v_c = rng.standard_normal(n)
        v_f = v_c.copy()
        getattr(backend.compiled, name)(indptr, indices, data, diag, f, v_c)
        getattr(backend.fallback, name)(indptr, indices, data, diag, f, v_f)
        npt.assert_allclose(v_c, v_f, rtol=1e-13, atol=1e-14)

    def test_matmat(self, rng):
        for _ in range(10):
            n1, n2, n3 = rng.integers(1, 25, size=3)
            a = random_csr(rng, n1, n2)
            b = random_csr(rng, n2, n3)
            out_c = backend.compiled.csr_matmat(*a, *b, n3)
            out_f = backend.fallback.csr_matmat(*a, *b, n3)
            npt.assert_array_equal(out_c[0], out_f[0])
            npt.assert_array_equal(out_c[1], out_f[1])
            npt.assert_allclose(out_c[2], out_f[2], rtol=1e-13, atol=1e-14)
            dense = csr_to_dense(*a, n2) @ csr_to_dense(*b, n3)
            npt.assert_allclose(csr_to_dense(*out_c, n3), dense,
                                rtol=1e-12, atol=1e-13)

    @pytest.mark.parametrize("name", ["trsv_lower", "trsv_lower_t"])
    def test_triangular_solves(self, name, rng):
        for _ in range(10):
            n = int(rng.integers(1, 30))
            G = rng.standard_normal((n, n))
            L = np.linalg.cholesky(G @ G.T + n * np.eye(n))
            b = rng.standard_normal(n)
            out_c = np.empty(n)
            out_f = np.empty(n)
            getattr(backend.compiled, name)(L, b, out_c)
            getattr(backend.fallback, name)(L, b, out_f)
            npt.assert_allclose(out_c, out_f, rtol=1e-12, atol=1e-13)
            system = L if name == "trsv_lower" else L.T
            npt.assert_allclose(out_c, np.linalg.solve(system, b),
                                rtol=1e-10, atol=1e-12)


class TestSelection:
    @needs_compiled
    def test_compiled_is_default(self):
        if os.environ.get("INEXACT_MG_PURE_PYTHON"):
            pytest.skip("fallback forced through the environment")
        assert backend.USING_COMPILED
        assert backend.active is backend.compiled

    def test_exported_names_bound(self):
        for name in ("csr_matvec", "csr_matvec_t", "sgs_forward", "sgs_backward",
                     "csr_matmat", "trsv_lower", "trsv_lower_t"):
            assert callable(getattr(backend, name))

    @needs_compiled
    def test_env_var_forces_fallback(self):
        code = ("import inexact_mg.backend as b; "
                "print(b.HAVE_COMPILED, b.USING_COMPILED)")
        env = dict(os.environ, INEXACT_MG_PURE_PYTHON="1")
        out = subprocess.run([sys.executable, "-c", code],
                             capture_output=True, text=True, env=env, check=True)
        assert out.stdout.split() == ["True", "False"]

    @needs_compiled
    def test_solver_results_agree_across_backends(self):
        code = (
            "import numpy as np\n"
            "from inexact_mg import fem\n"
            "from inexact_mg.multigrid import reference_solution\n"
            "spec = fem.ProblemSpec('poisson', levels=3, coarsest_m=4)\n"
            "h = fem.build_hierarchy(spec)\n"
            "b = fem.assemble_load(spec.meshes[-1].m)\n"
            "x = reference_solution(h, b)\n"
            "print(repr(float(x.sum())), repr(float(np.abs(x).max())))\n"
        )

        def run(**extra_env):
            env = dict(os.environ, **extra_env)
            env.pop("INEXACT_MG_PURE_PYTHON", None)
            env.update(extra_env)
            out = subprocess.run([sys.executable, "-c", code],
                                 capture_output=True, text=True, env=env,
                                 check=True)
            return [float(tok) for tok in out.stdout.split()]

        fast = run()
        slow = run(INEXACT_MG_PURE_PYTHON="1")
        npt.assert_allclose(fast, slow, rtol=1e-12)
