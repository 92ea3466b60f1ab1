"""V-cycle multigrid with a pluggable coarsest-level solver.

A cycle pre-smooths, restricts the residual, recurses with a zero
initial guess, prolongates the correction and post-smooths; on the
coarsest level it hands the restricted right-hand side to a coarse
solver object.  The exact variant solves that system through the dense
Cholesky factor; inexact variants (conjugate gradients under various
stopping rules) live in :mod:`inexact_mg.krylov` and plug into the
same slot.

The drivers below also support lockstep runs that advance an exact and
an inexact iteration side by side and record how far they drift apart,
which is the measurement the analysis tools are built around.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .linalg import a_norm, cholesky_solve, spmv, spmv_transpose

__all__ = [
    "DivergenceError",
    "ReferenceStagnationError",
    "SmootherSpec",
    "Hierarchy",
    "CoarseSolveReport",
    "CycleRecord",
    "VcycleTrace",
    "ExactCholeskySolver",
    "smooth_apply",
    "smoother_apply_m",
    "smoother_apply_mt",
    "vcycle",
    "run_vcycles",
    "run_lockstep",
    "reference_solution",
    "extended_residual_norm",
]

_SMOOTHER_KINDS = ("symmetric-gauss-seidel", "forward-gauss-seidel")


class DivergenceError(RuntimeError):
    """Raised when the outer iteration is clearly running away."""


class ReferenceStagnationError(RuntimeError):
    """Raised when the reference solve stagnates above its target."""


@dataclass(frozen=True)
class SmootherSpec:
    """Smoother choice for one level.

    ``symmetric-gauss-seidel`` runs a forward then a backward sweep per
    application, which makes the induced matrix symmetric.  The plain
    ``forward-gauss-seidel`` variant is nonsymmetric; it mainly exists
    so the symmetry diagnostics have something to reject.
    """

    kind: str = "symmetric-gauss-seidel"
    sweeps: int = 1

    def __post_init__(self):
        if self.kind not in _SMOOTHER_KINDS:
            raise ValueError(f"unknown smoother kind {self.kind!r}")
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")

    @property
    def symmetric(self):
        return self.kind == "symmetric-gauss-seidel"


def _checked_diagonal(A):
    d = A.diagonal()
    if np.any(d == 0.0):
        raise ValueError("smoother needs a nonzero diagonal in every row")
    return d


def _run_sweeps(A, f, v, mode, sweeps):
    d = _checked_diagonal(A)
    f = np.ascontiguousarray(f, dtype=np.float64)
    v = np.array(v, dtype=np.float64)
    for _ in range(sweeps):
        if mode in ("sgs", "fwd"):
            backend.sgs_forward(A.row_offsets, A.col_indices, A.values, d, f, v)
        if mode in ("sgs", "bwd"):
            backend.sgs_backward(A.row_offsets, A.col_indices, A.values, d, f, v)
    return v


def smooth_apply(A, f, v, spec):
    """Apply the smoother for A v = f starting from v; returns a new vector."""
    mode = "sgs" if spec.symmetric else "fwd"
    return _run_sweeps(A, f, v, mode, spec.sweeps)


def smoother_apply_m(A, spec, r):
    """Apply the induced smoother matrix M to r (a smoothing step from zero)."""
    return _run_sweeps(A, r, np.zeros(A.nrows), "sgs" if spec.symmetric else "fwd", spec.sweeps)


def smoother_apply_mt(A, spec, r):
    """Apply M.T to r; for the symmetric smoother this is M itself."""
    return _run_sweeps(A, r, np.zeros(A.nrows), "sgs" if spec.symmetric else "bwd", spec.sweeps)


@dataclass
class Hierarchy:
    """Grid hierarchy from coarsest (index 0) to finest (index -1).

    ``prolongations[j]`` interpolates level ``j-1`` to level ``j``;
    index 0 is unused.  Smoother entries may be None, which disables
    that smoothing half on that level.
    """

    matrices: list
    prolongations: list
    pre_smoothers: list
    post_smoothers: list
    coarse_factorization: object = None
    meshes: list = None

    def __post_init__(self):
        n = len(self.matrices)
        if n < 1:
            raise ValueError("hierarchy needs at least one level")
        for name in ("prolongations", "pre_smoothers", "post_smoothers"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have one entry per level")
        for j, A in enumerate(self.matrices):
            if A.nrows != A.ncols:
                raise ValueError(f"level {j} matrix is not square")
        for j in range(1, n):
            P = self.prolongations[j]
            if P is None:
                raise ValueError(f"missing prolongation for level {j}")
            if P.nrows != self.matrices[j].nrows or P.ncols != self.matrices[j - 1].nrows:
                raise ValueError(f"prolongation {j} has incompatible shape")
        if self.coarse_factorization is not None:
            if self.coarse_factorization.dim != self.matrices[0].nrows:
                raise ValueError("coarse factorization dimension mismatch")

    @property
    def n_levels(self):
        return len(self.matrices)

    @property
    def finest_level(self):
        return len(self.matrices) - 1

    @property
    def finest_matrix(self):
        return self.matrices[-1]

    def with_smoothers(self, pre="keep", post="keep"):
        """Copy sharing all matrices, with pre/post smoothers replaced.

        Pass a SmootherSpec, None (disable), or "keep" per side; the
        coarsest entry always stays None.
        """
        n = self.n_levels

        def expand(arg, current):
            if isinstance(arg, str) and arg == "keep":
                return list(current)
            return [None] + [arg] * (n - 1)

        return Hierarchy(
            matrices=self.matrices,
            prolongations=self.prolongations,
            pre_smoothers=expand(pre, self.pre_smoothers),
            post_smoothers=expand(post, self.post_smoothers),
            coarse_factorization=self.coarse_factorization,
            meshes=self.meshes,
        )


@dataclass
class CoarseSolveReport:
    """What the coarsest-level solver did for one V-cycle."""

    iterations: int
    residual_norm: float
    method: str = "cholesky"
    eta: float = None
    oracle_error_a0norm: float = None
    converged: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("negative iteration count")
        if self.residual_norm < 0.0:
            raise ValueError("negative residual norm")


class ExactCholeskySolver:
    """Coarsest-level solve through the dense Cholesky factor."""

    needs_finest_error = False

    def __call__(self, A0, chol, f0, context=None):
        if chol is None:
            raise ValueError("hierarchy carries no coarse factorization")
        v = cholesky_solve(chol, f0)
        res = float(np.linalg.norm(f0 - spmv(A0, v)))
        return v, CoarseSolveReport(iterations=0, residual_norm=res, method="cholesky")


def vcycle(hierarchy, f, v0, coarse=None, level=None, context=None):
    """One V-cycle for A_level v = f starting from v0.

    Parameters
    ----------
    hierarchy : Hierarchy
    f, v0 : ndarray
        Right-hand side and initial guess on ``level``.
    coarse : callable, optional
        Coarsest-level solver; defaults to the exact Cholesky solve.
        Receives ``(A0, factorization, f0, context)`` and returns
        ``(v0, CoarseSolveReport)``.
    level : int, optional
        Defaults to the finest level.
    context : float, optional
        Previous finest-level error A-norm, forwarded to coarse solvers
        whose stopping rule is defined relative to it.

    Returns
    -------
    (v, CoarseSolveReport)
    """
    if coarse is None:
        coarse = ExactCholeskySolver()
    if level is None:
        level = hierarchy.finest_level
    if level == 0:
        f0 = np.ascontiguousarray(f, dtype=np.float64)
        return coarse(hierarchy.matrices[0], hierarchy.coarse_factorization, f0, context)
    A = hierarchy.matrices[level]
    pre = hierarchy.pre_smoothers[level]
    post = hierarchy.post_smoothers[level]
    v = smooth_apply(A, f, v0, pre) if pre else np.array(v0, dtype=np.float64)
    r = f - spmv(A, v)
    P = hierarchy.prolongations[level]
    fc = spmv_transpose(P, r)
    vc, report = vcycle(hierarchy, fc, np.zeros(P.ncols), coarse, level - 1, context)
    v = v + spmv(P, vc)
    if post:
        v = smooth_apply(A, f, v, post)
    return v, report


@dataclass
class CycleRecord:
    """Per-cycle measurements; None marks quantities that were not taken."""

    cycle: int
    res_2norm: float
    err_anorm: float = None
    onecycle_reldiff: float = None
    cumdiff_anorm: float = None
    coarse: CoarseSolveReport = None


_CSV_COLUMNS = (
    "cycle,err_anorm,res_2norm,onecycle_reldiff,cumdiff_anorm,"
    "coarse_iters,coarse_eta,coarse_err_a0,coarse_auto"
)


def _fmt(x):
    return "" if x is None else repr(float(x))


@dataclass
class VcycleTrace:
    """Cycle-by-cycle record of a driver run, serializable to CSV."""

    records: list = field(default_factory=list)
    initial_err_anorm: float = None
    initial_res_2norm: float = None

    @property
    def n_cycles(self):
        return len(self.records)

    def final_err_anorm(self):
        return self.records[-1].err_anorm if self.records else self.initial_err_anorm

    def total_coarse_iterations(self):
        return sum(r.coarse.iterations for r in self.records if r.coarse is not None)

    def write_csv(self, path, header_comments=()):
        """Write one row per cycle; absent values become empty fields.

        ``header_comments`` lines are emitted first, prefixed with '#'.
        """
        with open(path, "w") as fh:
            for line in header_comments:
                fh.write(f"# {line}\n")
            fh.write(_CSV_COLUMNS + "\n")
            for rec in self.records:
                coarse = rec.coarse
                iters = "" if coarse is None else str(coarse.iterations)
                eta = "" if coarse is None else _fmt(coarse.eta)
                orc = "" if coarse is None else _fmt(coarse.oracle_error_a0norm)
                if coarse is None or coarse.method != "cg":
                    auto = ""
                else:
                    auto = "1" if coarse.iterations == 0 else "0"
                fh.write(
                    f"{rec.cycle},{_fmt(rec.err_anorm)},{_fmt(rec.res_2norm)},"
                    f"{_fmt(rec.onecycle_reldiff)},{_fmt(rec.cumdiff_anorm)},"
                    f"{iters},{eta},{orc},{auto}\n"
                )


def _wants_context(coarse):
    return bool(getattr(coarse, "needs_finest_error", False))


def _check_divergence(errs):
    if len(errs) >= 6 and errs[-1] > 10.0 * errs[-6] > 0.0:
        raise DivergenceError(
            f"error A-norm grew from {errs[-6]:.3e} to {errs[-1]:.3e} over 5 cycles"
        )


def run_vcycles(hierarchy, b, x0=None, finest_stop=None, coarse=None,
                reference=None, max_cycles=50):
    """Iterate V-cycles until the finest-level stopping rule fires.

    ``finest_stop`` may be None (run ``max_cycles`` cycles), a rule of
    kind ``max_iter``, or ``abs_error_oracle`` with threshold
    ``epsilon``, which needs ``reference``.  The previous finest error
    A-norm is forwarded to coarse solvers that declare
    ``needs_finest_error``.

    Returns
    -------
    (x, VcycleTrace)

    Raises
    ------
    DivergenceError
        If the error A-norm grows by more than 10x over 5 cycles.
    """
    A = hierarchy.finest_matrix
    x = np.zeros(A.nrows) if x0 is None else np.array(x0, dtype=np.float64)
    kind = getattr(finest_stop, "kind", None)
    if kind == "abs_error_oracle" and reference is None:
        raise ValueError("error-targeted finest stop needs a reference solution")
    if kind == "max_iter":
        max_cycles = finest_stop.max_iter
    elif kind not in (None, "abs_error_oracle"):
        raise ValueError(f"unsupported finest stopping rule {kind!r}")

    err = None if reference is None else a_norm(A, reference - x)
    trace = VcycleTrace(
        initial_err_anorm=err,
        initial_res_2norm=float(np.linalg.norm(b - spmv(A, x))),
    )
    if kind == "abs_error_oracle" and err <= finest_stop.epsilon:
        return x, trace
    errs = []
    give_context = _wants_context(coarse) if coarse is not None else False
    for cycle in range(1, max_cycles + 1):
        context = err if give_context else None
        x, report = vcycle(hierarchy, b, x, coarse=coarse, context=context)
        res = float(np.linalg.norm(b - spmv(A, x)))
        err = None if reference is None else a_norm(A, reference - x)
        trace.records.append(
            CycleRecord(cycle=cycle, res_2norm=res, err_anorm=err, coarse=report)
        )
        if err is not None:
            errs.append(err)
            _check_divergence(errs)
        if kind == "abs_error_oracle" and err <= finest_stop.epsilon:
            break
    return x, trace


def run_lockstep(hierarchy, b, coarse, reference, x0=None, n_cycles=50,
                 target_err_anorm=None):
    """Advance exact and inexact V-cycle sequences side by side.

    Per cycle, three V-cycles run: an exact cycle branched off the
    current inexact iterate (for the one-cycle difference), the inexact
    cycle itself, and the exact reference sequence (for the accumulated
    difference).  ``onecycle_reldiff`` is the one-cycle difference
    divided by the previous error A-norm of the inexact iterate.

    Stops after ``n_cycles``, or earlier once the inexact error A-norm
    falls below ``target_err_anorm``.

    Returns
    -------
    (x_inexact, VcycleTrace)
    """
    A = hierarchy.finest_matrix
    x_in = np.zeros(A.nrows) if x0 is None else np.array(x0, dtype=np.float64)
    x_ex = x_in.copy()
    exact = ExactCholeskySolver()
    give_context = _wants_context(coarse)
    trace = VcycleTrace(
        initial_err_anorm=a_norm(A, reference - x_in),
        initial_res_2norm=float(np.linalg.norm(b - spmv(A, x_in))),
    )
    errs = []
    for cycle in range(1, n_cycles + 1):
        prev_err = a_norm(A, reference - x_in)
        branch, _ = vcycle(hierarchy, b, x_in, coarse=exact)
        context = prev_err if give_context else None
        x_in, report = vcycle(hierarchy, b, x_in, coarse=coarse, context=context)
        x_ex, _ = vcycle(hierarchy, b, x_ex, coarse=exact)
        err = a_norm(A, reference - x_in)
        onecycle = None
        if prev_err > 0.0:
            onecycle = a_norm(A, branch - x_in) / prev_err
        trace.records.append(
            CycleRecord(
                cycle=cycle,
                res_2norm=float(np.linalg.norm(b - spmv(A, x_in))),
                err_anorm=err,
                onecycle_reldiff=onecycle,
                cumdiff_anorm=a_norm(A, x_ex - x_in),
                coarse=report,
            )
        )
        errs.append(err)
        _check_divergence(errs)
        if target_err_anorm is not None and err <= target_err_anorm:
            break
    return x_in, trace


def _spmv_extended(A, x):
    """A @ x accumulated in extended precision (float64 inputs)."""
    xe = np.asarray(x, dtype=np.longdouble)
    products = A.values.astype(np.longdouble) * xe[A.col_indices]
    out = np.zeros(A.nrows, dtype=np.longdouble)
    if products.size:
        nonempty = A.row_offsets[:-1] < A.row_offsets[1:]
        out[nonempty] = np.add.reduceat(products, A.row_offsets[:-1][nonempty])
    return out


def extended_residual_norm(A, x, b):
    """2-norm of b - A x evaluated in extended precision.

    In plain double precision the evaluation noise of the residual sits
    around ``u * ||A|| * ||x||``, which for well-converged iterates is
    larger than the residual itself; the extended accumulation makes
    residuals near the representability floor measurable.
    """
    r = np.asarray(b, dtype=np.longdouble) - _spmv_extended(A, x)
    return float(np.sqrt(np.dot(r, r)))


def reference_solution(hierarchy, b, target=1.0e-13, max_cycles=400):
    """Near-exact finest-level solution by over-converged exact V-cycles.

    Iterates defect correction with the exact-coarse V-cycle, holding
    the iterate and the defects in extended precision, until the
    extended-precision relative residual drops below ``target``.  Each
    defect is normalized before the double-precision cycle solves for
    the correction, so progress continues past the point where a plain
    double iterate would stagnate.  The result is returned in double
    and is accurate to its representability limit, well below what any
    measured run reaches.

    Raises
    ------
    ReferenceStagnationError
        If the relative residual stagnates above ``target``.
    """
    A = hierarchy.finest_matrix
    b = np.ascontiguousarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(A.nrows, dtype=np.longdouble)
    if bnorm == 0.0:
        return np.zeros(A.nrows)
    best = math.inf
    stall = 0
    for _ in range(max_cycles):
        r = np.asarray(b, dtype=np.longdouble) - _spmv_extended(A, x)
        rnorm = float(np.sqrt(np.dot(r, r)))
        rel = rnorm / bnorm
        if rel <= target:
            return np.asarray(x, dtype=np.float64)
        if rel >= 0.9 * best:
            stall += 1
            if stall >= 3:
                raise ReferenceStagnationError(
                    f"reference solve stagnated at relative residual {rel:.3e} "
                    f"(target {target:.1e})"
                )
        else:
            stall = 0
        best = min(best, rel)
        d, _ = vcycle(
            hierarchy, np.asarray(r / rnorm, dtype=np.float64), np.zeros(A.nrows)
        )
        x = x + np.longdouble(rnorm) * d.astype(np.longdouble)
    raise ReferenceStagnationError(
        f"reference solve did not reach {target:.1e} in {max_cycles} cycles"
    )
