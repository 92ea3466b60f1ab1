"""Smoothers, the V-cycle, drivers, traces, the reference solve."""

import numpy as np
import numpy.testing as npt
import pytest

from inexact_mg import fem
from inexact_mg.linalg import SparseMatrix, a_norm, spmv
from inexact_mg.multigrid import (
    CoarseSolveReport,
    CycleRecord,
    DivergenceError,
    ExactCholeskySolver,
    Hierarchy,
    ReferenceStagnationError,
    SmootherSpec,
    VcycleTrace,
    extended_residual_norm,
    reference_solution,
    run_lockstep,
    run_vcycles,
    smooth_apply,
    smoother_apply_m,
    smoother_apply_mt,
    vcycle,
)
from inexact_mg.krylov import StopRule


class TestSmoother:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SmootherSpec(kind="jacobi")
        with pytest.raises(ValueError):
            SmootherSpec(sweeps=0)

    def test_symmetric_flag(self):
        assert SmootherSpec().symmetric
        assert not SmootherSpec(kind="forward-gauss-seidel").symmetric

    def test_smoothing_reduces_energy_error(self, rng):
        A = fem.assemble_stiffness(8, fem.Coefficient.constant(1.0))
        x = rng.standard_normal(A.nrows)
        f = spmv(A, x)
        v = np.zeros(A.nrows)
        before = a_norm(A, x - v)
        for _ in range(3):
            v = smooth_apply(A, f, v, SmootherSpec())
            after = a_norm(A, x - v)
            assert after < before
            before = after

    def test_induced_matrix_is_symmetric(self, rng):
        A = fem.assemble_stiffness(4, fem.Coefficient.constant(1.0))
        spec = SmootherSpec()
        for _ in range(20):
            r, s = rng.standard_normal((2, A.nrows))
            left = s @ smoother_apply_m(A, spec, r)
            right = r @ smoother_apply_m(A, spec, s)
            npt.assert_allclose(left, right, rtol=1e-12)

    def test_forward_variant_is_not_symmetric(self, rng):
        A = fem.assemble_stiffness(4, fem.Coefficient.constant(1.0))
        spec = SmootherSpec(kind="forward-gauss-seidel")
        r, s = rng.standard_normal((2, A.nrows))
        left = s @ smoother_apply_m(A, spec, r)
        right = r @ smoother_apply_m(A, spec, s)
        assert abs(left - right) > 1e-8 * max(abs(left), abs(right))

    def test_transpose_application(self, rng):
        A = fem.assemble_stiffness(4, fem.Coefficient.constant(1.0))
        spec = SmootherSpec(kind="forward-gauss-seidel")
        r, s = rng.standard_normal((2, A.nrows))
        npt.assert_allclose(s @ smoother_apply_m(A, spec, r),
                            r @ smoother_apply_mt(A, spec, s), rtol=1e-12)

    def test_sgs_matches_triangular_formula(self, rng):
        # M = (D+L)^-T D (D+L)^-1 applied to r
        A = fem.assemble_stiffness(4, fem.Coefficient.constant(1.0))
        Ad = A.to_dense()
        D = np.diag(np.diag(Ad))
        L = np.tril(Ad, -1)
        r = rng.standard_normal(A.nrows)
        expected = np.linalg.solve((D + L).T, D @ np.linalg.solve(D + L, r))
        npt.assert_allclose(smoother_apply_m(A, SmootherSpec(), r), expected,
                            rtol=1e-12)

    def test_zero_diagonal_rejected(self):
        A = SparseMatrix.from_dense(np.array([[0.0, 1.0], [1.0, 2.0]]))
        with pytest.raises(ValueError, match="diagonal"):
            smooth_apply(A, np.ones(2), np.zeros(2), SmootherSpec())


class TestHierarchy:
    def test_validation_catches_shape_mismatch(self, small_poisson):
        _, h, _, _ = small_poisson
        with pytest.raises(ValueError, match="incompatible shape"):
            Hierarchy(
                matrices=[h.matrices[0], h.matrices[2]],
                prolongations=[None, h.prolongations[1]],
                pre_smoothers=[None, SmootherSpec()],
                post_smoothers=[None, SmootherSpec()],
            )

    def test_with_smoothers_disable_post(self, small_poisson):
        _, h, _, _ = small_poisson
        bare = h.with_smoothers(post=None)
        assert bare.post_smoothers == [None] * h.n_levels
        assert bare.pre_smoothers == h.pre_smoothers
        assert bare.matrices[0] is h.matrices[0]

    def test_properties(self, small_poisson):
        _, h, _, _ = small_poisson
        assert h.n_levels == 3
        assert h.finest_level == 2
        assert h.finest_matrix is h.matrices[2]


class TestVcycle:
    def test_reduces_error(self, small_poisson, rng):
        _, h, b, ref = small_poisson
        v = rng.standard_normal(h.finest_matrix.nrows)
        before = a_norm(h.finest_matrix, ref - v)
        v, report = vcycle(h, b, v)
        assert a_norm(h.finest_matrix, ref - v) < 0.5 * before
        assert report.method == "cholesky"
        assert report.iterations == 0

    def test_error_propagation_is_linear(self, small_poisson, rng):
        _, h, _, _ = small_poisson
        A = h.finest_matrix

        def E(e):
            v, _ = vcycle(h, spmv(A, e), np.zeros(A.nrows))
            return e - v

        x, y = rng.standard_normal((2, A.nrows))
        npt.assert_allclose(E(2.0 * x - 3.0 * y), 2.0 * E(x) - 3.0 * E(y),
                            rtol=1e-10, atol=1e-14)

    def test_converges_to_direct_solution(self, small_poisson):
        _, h, b, ref = small_poisson
        v = np.zeros(h.finest_matrix.nrows)
        for _ in range(30):
            v, _ = vcycle(h, b, v)
        assert a_norm(h.finest_matrix, ref - v) < 1e-13

    def test_exact_solver_requires_factorization(self, small_poisson):
        spec, h, b, _ = small_poisson
        bare = fem.build_hierarchy(spec, factorize=False)
        with pytest.raises(ValueError, match="factorization"):
            vcycle(bare, b, np.zeros(h.finest_matrix.nrows))


class TestRunVcycles:
    def test_max_iter_stop(self, small_poisson):
        _, h, b, ref = small_poisson
        _, trace = run_vcycles(h, b, finest_stop=StopRule.max_iterations(4),
                               reference=ref)
        assert trace.n_cycles == 4

    def test_error_target_stop(self, small_poisson):
        _, h, b, ref = small_poisson
        x, trace = run_vcycles(h, b, finest_stop=StopRule.abs_error_oracle(1e-6),
                               reference=ref)
        assert trace.final_err_anorm() <= 1e-6
        assert a_norm(h.finest_matrix, ref - x) <= 1e-6

    def test_target_needs_reference(self, small_poisson):
        _, h, b, _ = small_poisson
        with pytest.raises(ValueError, match="reference"):
            run_vcycles(h, b, finest_stop=StopRule.abs_error_oracle(1e-6))

    def test_presatisfied_runs_zero_cycles(self, small_poisson):
        _, h, b, ref = small_poisson
        x, trace = run_vcycles(h, b, x0=ref,
                               finest_stop=StopRule.abs_error_oracle(1e-6),
                               reference=ref)
        assert trace.n_cycles == 0
        npt.assert_array_equal(x, ref)

    def test_divergence_detected(self, small_poisson):
        _, h, b, ref = small_poisson
        scale = [1.0]

        def bad_coarse(A0, chol, f0, context=None):
            scale[0] *= 4.0
            v = scale[0] * np.ones(A0.nrows)
            return v, CoarseSolveReport(iterations=1, residual_norm=1.0,
                                        method="cg", converged=False)

        with pytest.raises(DivergenceError):
            run_vcycles(h, b, coarse=bad_coarse, reference=ref, max_cycles=40)


class InjectingSolver:
    """Exact coarse solve shifted by a fixed vector, for identity checks."""

    needs_finest_error = False

    def __init__(self, shift):
        self.shift = shift
        self.exact = ExactCholeskySolver()

    def __call__(self, A0, chol, f0, context=None):
        v, report = self.exact(A0, chol, f0, context)
        return v + self.shift, report


class TestLockstep:
    def test_cumulative_difference_definition(self, small_poisson, rng):
        spec, h, b, ref = small_poisson
        shift = 0.01 * rng.standard_normal(h.matrices[0].nrows)
        x_in, trace = run_lockstep(h, b, InjectingSolver(shift), ref, n_cycles=5)
        # replay the exact sequence and compare against the recorded drift
        x_ex = np.zeros(h.finest_matrix.nrows)
        for _ in range(5):
            x_ex, _ = vcycle(h, b, x_ex)
        npt.assert_allclose(trace.records[-1].cumdiff_anorm,
                            a_norm(h.finest_matrix, x_ex - x_in), rtol=1e-10)

    def test_target_stops_early(self, small_poisson):
        _, h, b, ref = small_poisson
        _, trace = run_lockstep(h, b, ExactCholeskySolver(), ref, n_cycles=50,
                                target_err_anorm=1e-6)
        assert trace.n_cycles < 50
        assert trace.final_err_anorm() <= 1e-6


class TestTrace:
    def test_csv_layout(self, tmp_path):
        trace = VcycleTrace(initial_err_anorm=1.0, initial_res_2norm=2.0)
        trace.records.append(
            CycleRecord(
                cycle=1, res_2norm=0.5, err_anorm=0.25,
                coarse=CoarseSolveReport(iterations=3, residual_norm=0.1,
                                         method="cg", eta=0.2),
            )
        )
        path = tmp_path / "t.csv"
        trace.write_csv(path, ["note"])
        lines = path.read_text().splitlines()
        assert lines[0] == "# note"
        assert lines[1] == ("cycle,err_anorm,res_2norm,onecycle_reldiff,"
                            "cumdiff_anorm,coarse_iters,coarse_eta,"
                            "coarse_err_a0,coarse_auto")
        cells = lines[2].split(",")
        assert cells[0] == "1" and cells[5] == "3" and cells[8] == "0"
        assert cells[3] == "" and cells[4] == ""  # lockstep-only fields absent


class TestReference:
    def test_m80_reference_below_target(self):
        spec = fem.ProblemSpec("poisson", levels=3, coarsest_m=20)
        h = fem.build_hierarchy(spec)
        b = fem.assemble_load(spec.meshes[-1].m)
        x = reference_solution(h, b)
        rel = extended_residual_norm(h.finest_matrix, x, b) / np.linalg.norm(b)
        assert rel <= 1.0e-13

    def test_unreachable_target_raises(self, small_poisson):
        _, h, b, _ = small_poisson
        with pytest.raises(ReferenceStagnationError):
            reference_solution(h, b, target=1e-19)

    def test_zero_rhs(self, small_poisson):
        _, h, _, _ = small_poisson
        x = reference_solution(h, np.zeros(h.finest_matrix.nrows))
        npt.assert_array_equal(x, 0.0)

    def test_extended_residual_matches_plain_for_crude_iterate(self, small_poisson):
        _, h, b, _ = small_poisson
        x = np.zeros(h.finest_matrix.nrows)
        plain = float(np.linalg.norm(b - spmv(h.finest_matrix, x)))
        npt.assert_allclose(extended_residual_norm(h.finest_matrix, x, b), plain,
                            rtol=1e-12)
