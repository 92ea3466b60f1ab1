"""Conjugate gradients with pluggable stopping rules for the coarse level.

Besides the classical relative-residual test, CG can stop on oracle
error norms (available because the coarse matrix is also factorized)
and on two computable absolute error bounds: the residual bound
``||r|| / sqrt(lambda_min_lb)`` and the sharper Gauss-Radau quadrature
bound, both driven by a strictly positive lower bound ``mu`` on the
smallest eigenvalue.

The Gauss-Radau coefficient is updated once per CG step from the step
size ``gamma_k`` and the residual-norm ratio ``delta_{k+1}``; if the
update degenerates (which can only happen through rounding when ``mu``
is too close to the smallest eigenvalue), the coefficient falls back
to ``1/mu``, turning that step's bound into the residual bound, which
is always valid.
"""

import math
from dataclasses import dataclass

import numpy as np

from .linalg import NotSpdError, a_norm, cholesky_solve, spmv
from .multigrid import CoarseSolveReport

__all__ = [
    "StopRule",
    "CgState",
    "CgIterationRecord",
    "gauss_radau_update",
    "residual_bound",
    "cg_solve",
    "CgCoarseSolver",
    "gamma_from_tau",
    "epsilon_from_target",
]

_ORACLE_KINDS = ("rel_error_oracle", "abs_error_oracle")


@dataclass(frozen=True)
class StopRule:
    """Tagged stopping rule with its parameters.

    Kinds: ``rel_residual`` (tau), ``rel_error_oracle`` (gamma, scaled
    by the previous finest error), ``abs_error_oracle`` (epsilon),
    ``abs_eta`` (epsilon, estimator 'RES' or 'GR', mu) and ``max_iter``.
    """

    kind: str
    tau: float = None
    gamma: float = None
    epsilon: float = None
    estimator: str = None
    mu: float = None
    max_iter: int = None

    @classmethod
    def rel_residual(cls, tau):
        if not 0.0 < tau < 1.0:
            raise ValueError("tau must be in (0, 1)")
        return cls("rel_residual", tau=tau)

    @classmethod
    def rel_error_oracle(cls, gamma):
        if gamma <= 0.0:
            raise ValueError("gamma must be positive")
        return cls("rel_error_oracle", gamma=gamma)

    @classmethod
    def abs_error_oracle(cls, epsilon):
        if epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        return cls("abs_error_oracle", epsilon=epsilon)

    @classmethod
    def abs_eta(cls, epsilon, estimator, mu):
        if epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if estimator not in ("RES", "GR"):
            raise ValueError("estimator must be 'RES' or 'GR'")
        if mu is None or mu <= 0.0:
            raise ValueError("mu must be a positive lower eigenvalue bound")
        return cls("abs_eta", epsilon=epsilon, estimator=estimator, mu=mu)

    @classmethod
    def max_iterations(cls, n):
        if n < 0:
            raise ValueError("iteration count must be nonnegative")
        return cls("max_iter", max_iter=n)


def residual_bound(r_norm, lambda_min_lb):
    """Error bound ||e||_A <= ||r|| / sqrt(lambda_min_lb)."""
    if lambda_min_lb <= 0.0:
        raise ValueError("lambda_min_lb must be positive")
    return r_norm / math.sqrt(lambda_min_lb)


@dataclass
class CgState:
    """CG recurrence state plus the Gauss-Radau coefficient.

    ``gamma_step`` and ``delta`` are the most recent CG step size
    ``||r_k||^2 / (p_k' A p_k)`` and residual ratio
    ``||r_{k+1}||^2 / ||r_k||^2``; ``gr_coefficient`` starts at
    ``1/mu`` and is advanced by :func:`gauss_radau_update`.
    """

    iterate: np.ndarray
    residual: np.ndarray
    direction: np.ndarray
    r_norm2: float
    mu: float = None
    gamma_step: float = None
    delta: float = None
    gr_coefficient: float = None

    @classmethod
    def start(cls, A0, f0, x0, mu=None):
        x = np.zeros(A0.nrows) if x0 is None else np.array(x0, dtype=np.float64)
        r = np.ascontiguousarray(f0, dtype=np.float64) - spmv(A0, x)
        gr = None
        if mu is not None:
            if mu <= 0.0:
                raise ValueError("mu must be positive")
            gr = 1.0 / mu
        return cls(
            iterate=x, residual=r, direction=r.copy(),
            r_norm2=float(np.dot(r, r)), mu=mu, gr_coefficient=gr,
        )

    def r_norm(self):
        return math.sqrt(self.r_norm2)


def gauss_radau_update(state):
    """Advance the Gauss-Radau coefficient for one CG step, return the bound.

    The upper bound on ``||e_k||_A`` after the step is
    ``sqrt(gr_coefficient) * ||r_k||``.  A nonpositive coefficient
    difference (rounding with ``mu`` at the smallest eigenvalue) resets
    the coefficient to ``1/mu``, degrading this step's bound to the
    always-valid residual bound.
    """
    if state.gr_coefficient is None:
        raise ValueError("state carries no Gauss-Radau coefficient (mu not set)")
    if state.gamma_step is None or state.delta is None:
        raise ValueError("no CG step recorded yet")
    diff = state.gr_coefficient - state.gamma_step
    if diff <= 0.0:
        state.gr_coefficient = 1.0 / state.mu
    else:
        state.gr_coefficient = diff / (state.mu * diff + state.delta)
    return math.sqrt(state.gr_coefficient) * state.r_norm()


@dataclass(frozen=True)
class CgIterationRecord:
    """Per-iteration CG measurements collected through ``history``."""

    iteration: int
    r_norm: float
    eta: float = None
    err_a0norm: float = None


def _eta(stop, state):
    if stop.estimator == "RES":
        return residual_bound(state.r_norm(), stop.mu)
    return math.sqrt(state.gr_coefficient) * state.r_norm()


def _stop_satisfied(stop, state, A0, f0_norm, oracle, prev_err_anorm, it):
    """Evaluate the stopping rule; returns (stop?, eta or None)."""
    kind = stop.kind
    if kind == "rel_residual":
        return state.r_norm() <= stop.tau * f0_norm, None
    if kind == "rel_error_oracle":
        if prev_err_anorm is None:
            raise ValueError("rel_error_oracle needs the previous finest error A-norm")
        err = a_norm(A0, oracle - state.iterate)
        return err <= stop.gamma * prev_err_anorm, None
    if kind == "abs_error_oracle":
        err = a_norm(A0, oracle - state.iterate)
        return err <= stop.epsilon, None
    if kind == "abs_eta":
        eta = _eta(stop, state)
        return eta <= stop.epsilon, eta
    if kind == "max_iter":
        return it >= stop.max_iter, None
    raise ValueError(f"unknown stopping rule kind {kind!r}")


def cg_solve(A0, f0, x_start, stop, oracle=None, prev_err_anorm=None,
             max_iter=None, selftest=False, history=None):
    """Conjugate gradients on the coarse system A0 v = f0.

    Parameters
    ----------
    A0 : SparseMatrix
    f0 : ndarray
    x_start : ndarray or None
        Initial iterate (zero when None).
    stop : StopRule
        Evaluated before the first iteration and after every step, so a
        rule that already holds at the start costs zero iterations.
    oracle : ndarray, optional
        Exact solution; required by the oracle rules, otherwise only
        used to report the final error.
    prev_err_anorm : float, optional
        Previous finest-level error A-norm for the rel_error_oracle rule.
    max_iter : int, optional
        Hard cap; defaults to 10 times the dimension.  Hitting it
        returns ``converged=False``.
    selftest : bool
        With an oracle and an eta rule, verify eta stays an upper bound
        on the true error A-norm each iteration and raise otherwise.
    history : list, optional
        Appended with one :class:`CgIterationRecord` per stopping-rule
        evaluation, starting at iteration 0.  The eta field is only
        filled under an ``abs_eta`` rule and the error field only when
        an oracle is available.

    Returns
    -------
    (x, CoarseSolveReport)
    """
    if stop.kind in _ORACLE_KINDS and oracle is None:
        raise ValueError(f"stopping rule {stop.kind} needs the oracle solution")
    if max_iter is None:
        max_iter = 10 * A0.nrows
    mu = stop.mu if stop.kind == "abs_eta" else None
    state = CgState.start(A0, f0, x_start, mu=mu)
    f0_norm = float(np.linalg.norm(f0))
    # below this the "true" error is dominated by the oracle's own roundoff
    # and comparing bounds against it is meaningless
    noise_floor = 1.0e-13 * a_norm(A0, oracle) if (selftest and oracle is not None) else 0.0

    def check(it):
        done, eta = _stop_satisfied(stop, state, A0, f0_norm, oracle, prev_err_anorm, it)
        if selftest and eta is not None and oracle is not None:
            true_err = a_norm(A0, oracle - state.iterate)
            if true_err > noise_floor and eta < true_err * (1.0 - 1.0e-10):
                raise RuntimeError(
                    f"eta {eta:.6e} fell below the true error {true_err:.6e} "
                    f"at iteration {it}"
                )
        if history is not None:
            err = a_norm(A0, oracle - state.iterate) if oracle is not None else None
            history.append(CgIterationRecord(
                iteration=it, r_norm=state.r_norm(), eta=eta, err_a0norm=err,
            ))
        return done, eta

    done, eta = check(0)
    it = 0
    while not done and state.r_norm2 > 0.0 and it < max_iter:
        it += 1
        q = spmv(A0, state.direction)
        pap = float(np.dot(state.direction, q))
        if pap <= 0.0:
            raise NotSpdError("nonpositive curvature encountered in CG")
        alpha = state.r_norm2 / pap
        state.iterate += alpha * state.direction
        state.residual -= alpha * q
        rho_new = float(np.dot(state.residual, state.residual))
        state.gamma_step = state.r_norm2 / pap
        state.delta = rho_new / state.r_norm2
        beta = rho_new / state.r_norm2
        state.r_norm2 = rho_new
        if state.gr_coefficient is not None:
            gauss_radau_update(state)
        if it % 50 == 0:
            true_r = np.ascontiguousarray(f0, dtype=np.float64) - spmv(A0, state.iterate)
            drift = float(np.linalg.norm(true_r - state.residual))
            if drift > 1.0e-10 * max(f0_norm, 1.0e-300):
                raise RuntimeError(
                    f"CG residual recurrence drifted by {drift:.3e} at iteration {it}"
                )
        done, eta = check(it)
        if not done:
            state.direction = state.residual + beta * state.direction
    report = CoarseSolveReport(
        iterations=it,
        residual_norm=state.r_norm(),
        method="cg",
        eta=eta,
        oracle_error_a0norm=(
            a_norm(A0, oracle - state.iterate) if oracle is not None else None
        ),
        converged=bool(done),
    )
    return state.iterate, report


@dataclass
class CgCoarseSolver:
    """Coarsest-level solver running CG under one stopping rule.

    Plugs into :func:`inexact_mg.multigrid.vcycle`.  The oracle
    solution is computed through the Cholesky factor only when a rule
    needs it or when ``report_oracle`` asks for the per-cycle coarse
    error measurement in the trace.
    """

    stop: StopRule
    max_iter_factor: int = 10
    report_oracle: bool = False
    selftest: bool = False

    @property
    def needs_finest_error(self):
        return self.stop.kind == "rel_error_oracle"

    def __call__(self, A0, chol, f0, context=None):
        oracle = None
        if self.stop.kind in _ORACLE_KINDS or (self.report_oracle and chol is not None):
            if chol is None:
                raise ValueError("oracle stopping rule needs the coarse factorization")
            oracle = cholesky_solve(chol, f0)
        return cg_solve(
            A0, f0, None, self.stop,
            oracle=oracle,
            prev_err_anorm=context,
            max_iter=self.max_iter_factor * A0.nrows,
            selftest=self.selftest,
        )


def gamma_from_tau(tau, residual_gain, matrix_norm, coarse_inv_norm):
    """Error factor guaranteed by the relative-residual rule at tolerance tau.

    A coarse solve with ``||r|| <= tau * ||f0||`` has coarse error
    A0-norm at most ``tau * residual_gain * sqrt(matrix_norm) *
    sqrt(coarse_inv_norm)`` times the previous finest error A-norm.
    """
    for name, val in (
        ("tau", tau), ("residual_gain", residual_gain),
        ("matrix_norm", matrix_norm), ("coarse_inv_norm", coarse_inv_norm),
    ):
        if val <= 0.0:
            raise ValueError(f"{name} must be positive")
    return tau * residual_gain * math.sqrt(matrix_norm) * math.sqrt(coarse_inv_norm)


def epsilon_from_target(theta, alpha=None, contraction=None):
    """Coarse tolerance that keeps the final accuracy at theta.

    Either reserve a fraction of the budget, ``epsilon = (1 - alpha) *
    theta`` with ``alpha`` in (0, 1), or use the measured V-cycle
    contraction norm, ``epsilon = theta * (1 - contraction)``.
    """
    if theta <= 0.0:
        raise ValueError("theta must be positive")
    if (alpha is None) == (contraction is None):
        raise ValueError("give exactly one of alpha and contraction")
    if alpha is not None:
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        return (1.0 - alpha) * theta
    if not 0.0 <= contraction < 1.0:
        raise ValueError("contraction must be in [0, 1)")
    return theta * (1.0 - contraction)
