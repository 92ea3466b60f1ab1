"""Operators and norm constants for coarse-solve perturbation analysis.

A V-cycle whose coarsest solve is off by ``d`` produces a finest-level
iterate that is off by a fixed linear image of ``d``: the composition
of prolongations and post-smoothing error propagators climbing the
hierarchy.  Dually, the right-hand side the coarsest level receives is
a fixed linear image of the finest residual: restrictions composed
with pre-smoothing error propagators descending the hierarchy.  This
module applies both maps (and their transposes) matrix-free and
estimates the operator norms that the stopping-rule theory combines:

* contraction norm: energy norm of the exact-coarse V-cycle error
  propagation on the finest level,
* coarse error gain: norm of the coarse-error-to-fine map from the
  coarse energy norm to the fine energy norm (at most 1 with
  post-smoothing),
* residual gain: Euclidean norm of the residual-to-coarse-rhs map,
* the finest matrix norm and the coarse inverse norm.

All estimates come from seeded power iteration and carry their
iteration count and convergence flag.
"""

import math
from dataclasses import dataclass

import numpy as np

from .linalg import (
    EigenEstimate,
    a_inner,
    a_norm,
    cholesky_solve,
    power_method_largest,
    spmv,
    spmv_transpose,
)
from .multigrid import smoother_apply_m, smoother_apply_mt

__all__ = [
    "coarse_error_to_fine",
    "coarse_error_to_fine_t",
    "residual_to_coarse_rhs",
    "residual_to_coarse_rhs_t",
    "smoother_contraction_norm",
    "estimate_contraction_norm",
    "estimate_coarse_error_gain",
    "estimate_residual_gain",
    "NormConstants",
    "compute_norm_constants",
]


def coarse_error_to_fine(hierarchy, v):
    """Map a coarsest-level solve perturbation to its finest-level image.

    Prolongates level by level, applying the post-smoothing error
    propagator ``I - N_j A_j`` after each interpolation.  An exact
    cycle and one whose coarse solve was off by ``v`` end the cycle
    apart by exactly this image of ``v``.
    """
    w = np.array(v, dtype=np.float64)
    for j in range(1, hierarchy.n_levels):
        w = spmv(hierarchy.prolongations[j], w)
        post = hierarchy.post_smoothers[j]
        if post is not None:
            A = hierarchy.matrices[j]
            w = w - smoother_apply_m(A, post, spmv(A, w))
    return w


def coarse_error_to_fine_t(hierarchy, z):
    """Transpose of :func:`coarse_error_to_fine`."""
    w = np.array(z, dtype=np.float64)
    for j in range(hierarchy.n_levels - 1, 0, -1):
        post = hierarchy.post_smoothers[j]
        if post is not None:
            A = hierarchy.matrices[j]
            w = w - spmv(A, smoother_apply_mt(A, post, w))
        w = spmv_transpose(hierarchy.prolongations[j], w)
    return w


def residual_to_coarse_rhs(hierarchy, r):
    """Map a finest-level residual to the right-hand side reaching level 0.

    Applies the pre-smoothing residual propagator ``I - A_j M_j``
    followed by restriction on every level from finest to coarsest.
    This is exactly the right-hand side the coarsest solver receives
    during a V-cycle whose incoming finest residual is ``r``.
    """
    w = np.array(r, dtype=np.float64)
    for j in range(hierarchy.n_levels - 1, 0, -1):
        pre = hierarchy.pre_smoothers[j]
        if pre is not None:
            A = hierarchy.matrices[j]
            w = w - spmv(A, smoother_apply_m(A, pre, w))
        w = spmv_transpose(hierarchy.prolongations[j], w)
    return w


def residual_to_coarse_rhs_t(hierarchy, v):
    """Transpose of :func:`residual_to_coarse_rhs`."""
    w = np.array(v, dtype=np.float64)
    for j in range(1, hierarchy.n_levels):
        w = spmv(hierarchy.prolongations[j], w)
        pre = hierarchy.pre_smoothers[j]
        if pre is not None:
            A = hierarchy.matrices[j]
            w = w - smoother_apply_mt(A, pre, spmv(A, w))
    return w


def smoother_contraction_norm(A, smoother, tol=1.0e-6, max_iter=5000, seed=0):
    """Energy norm of ``I - N A`` for a symmetric smoother N on one level."""
    if not smoother.symmetric:
        raise ValueError("contraction norm in the energy norm needs a symmetric smoother")

    def op(v):
        return v - smoother_apply_m(A, smoother, spmv(A, v))

    est = power_method_largest(
        op, A.nrows, inner=lambda x, y: a_inner(A, x, y),
        tol=tol, max_iter=max_iter, seed=seed,
    )
    return est


def _vcycle_error_op(hierarchy):
    from .multigrid import vcycle

    A = hierarchy.finest_matrix

    def op(x):
        u, _ = vcycle(hierarchy, spmv(A, x), np.zeros(A.nrows))
        return x - u

    return op


def estimate_contraction_norm(hierarchy, tol=1.0e-6, max_iter=5000, seed=0):
    """Energy norm of the exact-coarse V-cycle error propagation.

    With equal symmetric pre- and post-smoothing the propagation
    operator is self-adjoint and positive semidefinite in the energy
    inner product, so its energy norm equals its spectral radius and
    power iteration in that inner product finds it.  A cheap
    self-adjointness probe runs first and rejects hierarchies (for
    example with one-sided smoothing) where the identity fails.
    """
    if hierarchy.coarse_factorization is None:
        raise ValueError("contraction estimate needs the coarse factorization")
    A = hierarchy.finest_matrix
    op = _vcycle_error_op(hierarchy)
    inner = lambda x, y: a_inner(A, x, y)
    rng = np.random.default_rng(seed)
    for _ in range(2):
        x = rng.standard_normal(A.nrows)
        y = rng.standard_normal(A.nrows)
        lhs = inner(op(x), y)
        rhs = inner(x, op(y))
        scale = a_norm(A, x) * a_norm(A, y)
        if abs(lhs - rhs) > 1.0e-8 * scale:
            raise ValueError(
                "V-cycle error propagation is not self-adjoint in the energy inner "
                "product; use equal symmetric pre- and post-smoothers"
            )
    return power_method_largest(op, A.nrows, inner=inner, tol=tol,
                                max_iter=max_iter, seed=seed)


def estimate_coarse_error_gain(hierarchy, tol=1.0e-6, max_iter=5000, seed=0):
    """Norm of the coarse-error-to-fine map, coarse to fine energy norm.

    Power iteration on the map composed with its adjoint in the coarse
    energy inner product; the estimate is the square root of the
    resulting eigenvalue.  With post-smoothing on every level the value
    is below 1; with post-smoothing disabled the composed interpolant
    preserves the energy norm exactly and the value is 1.
    """
    chol = hierarchy.coarse_factorization
    if chol is None:
        raise ValueError("coarse error gain needs the coarse factorization")
    A = hierarchy.finest_matrix
    A0 = hierarchy.matrices[0]

    def op(v):
        w = coarse_error_to_fine(hierarchy, v)
        return cholesky_solve(chol, coarse_error_to_fine_t(hierarchy, spmv(A, w)))

    est = power_method_largest(
        op, A0.nrows, inner=lambda x, y: a_inner(A0, x, y),
        tol=tol, max_iter=max_iter, seed=seed,
    )
    return EigenEstimate(
        math.sqrt(max(est.value, 0.0)), est.iterations, est.converged, est.residual
    )


def estimate_residual_gain(hierarchy, tol=1.0e-6, max_iter=5000, seed=0):
    """Euclidean norm of the residual-to-coarse-rhs map."""
    A = hierarchy.finest_matrix

    def op(r):
        return residual_to_coarse_rhs_t(hierarchy, residual_to_coarse_rhs(hierarchy, r))

    est = power_method_largest(op, A.nrows, tol=tol, max_iter=max_iter, seed=seed)
    return EigenEstimate(
        math.sqrt(max(est.value, 0.0)), est.iterations, est.converged, est.residual
    )


@dataclass
class NormConstants:
    """The operator norms the stopping-rule theory combines."""

    contraction_norm: EigenEstimate
    coarse_error_gain: EigenEstimate
    residual_gain: EigenEstimate
    matrix_norm: EigenEstimate
    coarse_inv_norm: EigenEstimate

    def header_comments(self):
        """Human-readable lines for CSV headers, with provenance."""
        lines = []
        for name in (
            "contraction_norm", "coarse_error_gain", "residual_gain",
            "matrix_norm", "coarse_inv_norm",
        ):
            est = getattr(self, name)
            lines.append(
                f"{name} = {est.value!r} (iterations={est.iterations}, "
                f"converged={est.converged}, residual={est.residual:.3e})"
            )
        return lines


def compute_norm_constants(hierarchy, tol=1.0e-6, max_iter=5000, seed=0):
    """Estimate all norm constants for one hierarchy.

    Returns
    -------
    NormConstants
    """
    chol = hierarchy.coarse_factorization
    if chol is None:
        raise ValueError("norm constants need the coarse factorization")
    A = hierarchy.finest_matrix
    matrix_norm = power_method_largest(
        lambda v: spmv(A, v), A.nrows, tol=tol, max_iter=max_iter, seed=seed
    )
    coarse_inv_norm = power_method_largest(
        lambda v: cholesky_solve(chol, v), chol.dim, tol=tol, max_iter=max_iter, seed=seed
    )
    return NormConstants(
        contraction_norm=estimate_contraction_norm(hierarchy, tol, max_iter, seed),
        coarse_error_gain=estimate_coarse_error_gain(hierarchy, tol, max_iter, seed),
        residual_gain=estimate_residual_gain(hierarchy, tol, max_iter, seed),
        matrix_norm=matrix_norm,
        coarse_inv_norm=coarse_inv_norm,
    )
