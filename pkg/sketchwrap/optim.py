"""
Optimization back ends
======================

`solve_qp` wraps OSQP (operator splitting / ADMM) for the lateral tube fits;
`solve_nlp` is an augmented-Lagrangian outer loop over scipy's L-BFGS-B for
the MPC; `check_gradient` compares analytic derivatives with central
differences.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import metadata
from typing import Callable, Optional, Tuple

import numpy as np
import osqp
from scipy import sparse
from scipy.optimize import Bounds, minimize

from sketchwrap.logger import log_solve

logger = logging.getLogger(__name__)

QP_RHO = 1.0
QP_RHO_TOLERANCE = 10.0
QP_RHO_INTERVAL = 25        # fixed interval; 0 would adapt on wall-clock time
AL_INITIAL_PENALTY = 10.0
AL_PENALTY_GROWTH = 10.0
AL_MAX_PENALTY = 1e8
AL_SUFFICIENT_DECREASE = 0.25


class SolveStatus(str, Enum):
    CONVERGED = 'Converged'
    MAX_ITER = 'MaxIter'
    INFEASIBLE = 'Infeasible'


@dataclass(frozen=True)
class SolveReport:
    status: SolveStatus
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    multipliers: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    penalty: Optional[float] = None

    @property
    def converged(self) -> bool:
        return self.status == SolveStatus.CONVERGED


@dataclass(frozen=True)
class QpProblem:
    """min 1/2 x'Hx + g'x  s.t.  lower <= A x <= upper"""

    H: np.ndarray
    g: np.ndarray
    A: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        g = np.asarray(self.g, dtype=float).reshape(-1)
        n = g.size
        A = np.asarray(self.A, dtype=float).reshape(-1, n)
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {H.shape}")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-9:
            raise ValueError("H must be symmetric")
        if lower.size != A.shape[0] or upper.size != A.shape[0]:
            raise ValueError("bound vectors must match the constraint rows")
        if np.any(lower > upper):
            raise ValueError("lower must not exceed upper")
        for name, value in (('H', H), ('g', g), ('A', A), ('lower', lower), ('upper', upper)):
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass(frozen=True)
class NlpProblem:
    """
    min f(x)  s.t.  c(x) <= 0,  lower <= x <= upper

    `objective(x)` returns (f, grad); `constraints(x)` returns (c, jacobian).
    """

    n: int
    objective: Callable[[np.ndarray], Tuple[float, np.ndarray]]
    constraints: Optional[Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    @property
    def lower_bounds(self) -> np.ndarray:
        return np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)

    @property
    def upper_bounds(self) -> np.ndarray:
        return np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)

    def evaluate_constraints(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if self.constraints is None:
            return np.zeros(0), np.zeros((0, self.n))
        c, jac = self.constraints(x)
        return np.asarray(c, dtype=float).reshape(-1), np.asarray(jac, dtype=float).reshape(-1, self.n)


def _polish_setting() -> str:
    # OSQP 1.x renamed the polish flag
    try:
        major = int(metadata.version('osqp').split('.')[0])
    except (metadata.PackageNotFoundError, ValueError):
        major = 0
    return 'polishing' if major >= 1 else 'polish'


_POLISH_KEY = _polish_setting()


def qp_residuals(problem: QpProblem, x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """(primal, dual) infinity-norm KKT residuals."""
    ax = problem.A @ x
    primal = max(0.0, float(np.max(ax - problem.upper, initial=0.0)), float(np.max(problem.lower - ax, initial=0.0)))
    dual = float(np.max(np.abs(problem.H @ x + problem.g + problem.A.T @ y), initial=0.0))
    return primal, dual


def solve_qp(problem: QpProblem, tol: float = 1e-6, max_iter: int = 2000) -> Tuple[np.ndarray, SolveReport]:
    """
    Solve a convex QP with OSQP.

    Args:
        problem: QP data
        tol: Absolute KKT tolerance
        max_iter: ADMM iteration cap

    Returns:
        (x, SolveReport); Infeasible when OSQP certifies primal infeasibility
    """
    started = time.perf_counter()
    A, lower, upper = problem.A, problem.lower, problem.upper
    if problem.m == 0:
        A = np.zeros((1, problem.n))
        lower, upper = np.array([-np.inf]), np.array([np.inf])

    settings = {
        'verbose': False,
        'eps_abs': tol,
        'eps_rel': 0.0,
        'max_iter': max_iter,
        'rho': QP_RHO,
        'adaptive_rho': True,
        'adaptive_rho_interval': QP_RHO_INTERVAL,
        'adaptive_rho_tolerance': QP_RHO_TOLERANCE,
        'check_termination': 25,
        _POLISH_KEY: True,
    }
    solver = osqp.OSQP()
    solver.setup(
        P=sparse.triu(sparse.csc_matrix(problem.H), format='csc'),
        q=problem.g,
        A=sparse.csc_matrix(A),
        l=lower,
        u=upper,
        **settings
    )
    try:
        result = solver.solve()
        status_text = str(result.info.status).lower()
        iterations = int(result.info.iter)
        x = None if result.x is None else np.asarray(result.x, dtype=float)
        y = None if result.y is None else np.asarray(result.y, dtype=float)
    except Exception as e:  # OSQP >= 1.0 may raise on non-solved statuses
        status_text, iterations, x, y = str(e).lower(), max_iter, None, None

    if x is None or not np.all(np.isfinite(x)):
        x = np.zeros(problem.n)
        y = np.zeros(problem.m)
    y = y[:problem.m] if problem.m else np.zeros(0)
    primal, dual = qp_residuals(problem, x, y)

    if 'primal infeasible' in status_text:
        status = SolveStatus.INFEASIBLE
    elif primal <= tol and dual <= tol:
        status = SolveStatus.CONVERGED
    elif primal > 1e3 * tol and 'infeasible' in status_text:
        status = SolveStatus.INFEASIBLE
    else:
        status = SolveStatus.MAX_ITER

    report = SolveReport(status, iterations, primal, dual, problem.objective(x), multipliers=y)
    log_solve('qp', status.value, iterations, (time.perf_counter() - started) * 1000)
    return x, report


def _projected_gradient_norm(x: np.ndarray, grad: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    return float(np.max(np.abs(x - np.clip(x - grad, lower, upper)), initial=0.0))


def solve_nlp(
    problem: NlpProblem,
    init: np.ndarray,
    tol: float = 1e-4,
    max_outer: int = 30,
    inner_max_iter: int = 500,
    multipliers: Optional[np.ndarray] = None,
    penalty: Optional[float] = None,
) -> Tuple[np.ndarray, SolveReport]:
    """
    Augmented-Lagrangian solve of an inequality-constrained NLP.

    Each outer iteration minimizes the PHR augmented Lagrangian with box-bounded
    L-BFGS-B, then updates multipliers (lambda <- max(0, lambda + mu c)) and
    grows mu tenfold when the violation did not shrink enough.

    Args:
        problem: NLP with analytic derivatives
        init: Starting point (clipped into the box)
        tol: Violation and projected-gradient tolerance
        max_outer: Outer iteration cap
        inner_max_iter: L-BFGS-B iteration cap per outer iteration
        multipliers: Optional warm-start multipliers
        penalty: Optional warm-start penalty

    Returns:
        (x, SolveReport). On MaxIter the best iterate found is returned.
    """
    started = time.perf_counter()
    lower, upper = problem.lower_bounds, problem.upper_bounds
    x = np.clip(np.asarray(init, dtype=float).reshape(-1), lower, upper)
    c0, _ = problem.evaluate_constraints(x)
    m = c0.size

    lam = np.zeros(m) if multipliers is None or len(multipliers) != m else np.maximum(np.asarray(multipliers, dtype=float), 0.0)
    mu = AL_INITIAL_PENALTY if penalty is None else float(penalty)
    bounds = Bounds(lower, upper)
    inner_tol = max(0.1 * tol, 1e-12)

    def augmented(z):
        f, grad = problem.objective(z)
        if m == 0:
            return f, np.asarray(grad, dtype=float)
        c, jac = problem.evaluate_constraints(z)
        shifted = np.maximum(0.0, lam + mu * c)
        value = f + (shifted @ shifted - lam @ lam) / (2.0 * mu)
        return value, np.asarray(grad, dtype=float) + jac.T @ shifted

    iterations = 0
    previous_violation = np.inf
    best = None
    status = SolveStatus.MAX_ITER
    for _ in range(max_outer):
        result = minimize(
            augmented, x, jac=True, method='L-BFGS-B', bounds=bounds,
            options={'maxiter': inner_max_iter, 'gtol': inner_tol, 'ftol': 1e-15, 'maxcor': 10},
        )
        iterations += int(result.nit)
        x = np.clip(result.x, lower, upper)

        f, grad = problem.objective(x)
        c, jac = problem.evaluate_constraints(x)
        violation = max(0.0, float(np.max(c, initial=0.0)))
        if m:
            lam = np.maximum(0.0, lam + mu * c)
        pg = _projected_gradient_norm(x, np.asarray(grad, dtype=float) + jac.T @ lam, lower, upper)

        candidate = (x.copy(), float(f), violation, pg, lam.copy(), mu)
        if best is None or _better(candidate, best, tol):
            best = candidate
        if violation <= tol and pg <= tol:
            status = SolveStatus.CONVERGED
            best = candidate
            break
        if violation > AL_SUFFICIENT_DECREASE * previous_violation:
            mu = min(mu * AL_PENALTY_GROWTH, AL_MAX_PENALTY)
        previous_violation = violation

    x_best, f_best, violation, pg, lam_best, mu_best = best
    report = SolveReport(status, iterations, violation, pg, f_best, multipliers=lam_best, penalty=mu_best)
    log_solve('nlp', status.value, iterations, (time.perf_counter() - started) * 1000)
    return x_best, report


def _better(candidate, incumbent, tol: float) -> bool:
    _, f_new, v_new, _, _, _ = candidate
    _, f_old, v_old, _, _, _ = incumbent
    if (v_new <= tol) != (v_old <= tol):
        return v_new <= tol
    if v_new <= tol:
        return f_new < f_old
    return v_new < v_old


def check_gradient(problem: NlpProblem, point: np.ndarray, eps: float = 1e-6) -> float:
    """
    Worst relative error of the analytic gradient and constraint Jacobian.

    Errors are measured per function as |analytic - fd|_inf / max(1, |fd|_inf)
    with central differences of step eps.
    """
    x = np.asarray(point, dtype=float).reshape(-1)
    _, grad = problem.objective(x)
    c, jac = problem.evaluate_constraints(x)
    fd_grad = np.zeros(problem.n)
    fd_jac = np.zeros((c.size, problem.n))
    for i in range(problem.n):
        step = np.zeros(problem.n)
        step[i] = eps
        f_plus, _ = problem.objective(x + step)
        f_minus, _ = problem.objective(x - step)
        fd_grad[i] = (f_plus - f_minus) / (2 * eps)
        if c.size:
            c_plus, _ = problem.evaluate_constraints(x + step)
            c_minus, _ = problem.evaluate_constraints(x - step)
            fd_jac[:, i] = (c_plus - c_minus) / (2 * eps)

    worst = float(np.max(np.abs(np.asarray(grad) - fd_grad)) / max(1.0, float(np.max(np.abs(fd_grad)))))
    for row in range(c.size):
        scale = max(1.0, float(np.max(np.abs(fd_jac[row]))))
        worst = max(worst, float(np.max(np.abs(jac[row] - fd_jac[row]))) / scale)
    return worst
