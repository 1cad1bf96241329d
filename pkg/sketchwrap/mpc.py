"""
Model predictive control over a curvilinear kinematic bicycle
=============================================================

State [p, n, omega, v, a, beta] (progress, lateral offset of the rear axle,
heading relative to the baseline tangent, speed, acceleration, steering),
control [j, dbeta] (jerk, steering increment per MPC step).

The horizon is single-shot: controls are the only decision variables and
states come from an explicit Euler rollout, so every returned plan satisfies
the dynamics exactly. Constraints per step k = 1..H:

    4 footprint rows     corners inside the hard tube
    1-2 longitudinal     front bumper below the upper bound, rear bumper above
                         the lower bound (when one is imposed)
    6 state limits       |beta| <= beta_max, a_min <= a <= a_max, 0 <= v <= v_max
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from sketchwrap.config_manager import MpcParams, VehicleGeometry
from sketchwrap.errors import DomainError, SingularOffset, SolverFailed
from sketchwrap.geometry import Baseline, project_points
from sketchwrap.maneuver import LateralTube, Maneuver, VehicleState
from sketchwrap.optim import NlpProblem, SolveReport, SolveStatus, solve_nlp

logger = logging.getLogger(__name__)

STATE_SIZE = 6
CONTROL_SIZE = 2
ROWS_PER_STEP = 12
P, N, OMEGA, V, A, BETA = range(STATE_SIZE)
J, DBETA = range(CONTROL_SIZE)


@dataclass(frozen=True)
class MpcState:
    p: float
    n: float
    omega: float
    v: float
    a: float = 0.0
    beta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.n, self.omega, self.v, self.a, self.beta])

    @classmethod
    def from_array(cls, values) -> 'MpcState':
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class MpcControl:
    j: float = 0.0
    dbeta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.j, self.dbeta])


@dataclass(frozen=True)
class MpcSolution:
    """
    Rolled-out plan.

    states: (H + 1, 6); controls: (H, 2); cartesian: (H + 1, 3) as (x, y, heading)
    """

    states: np.ndarray
    controls: np.ndarray
    report: SolveReport
    cartesian: np.ndarray
    cost: float = 0.0
    max_footprint_residual: float = 0.0

    @property
    def horizon_steps(self) -> int:
        return self.controls.shape[0]

    def state(self, k: int) -> MpcState:
        return MpcState.from_array(self.states[k])

    def control(self, k: int) -> MpcControl:
        return MpcControl(*(float(v) for v in self.controls[k]))


# -- dynamics ---------------------------------------------------------------

def _step(x: np.ndarray, u: np.ndarray, dt: float, baseline: Baseline, wheelbase: float,
          control_dt: float, strict: bool, min_margin: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Euler step with its Jacobians (A = dx'/dx, B = dx'/du)."""
    p, n, omega, v, a, beta = x
    jerk, dbeta = u
    g, dg, kappa, dkappa = baseline.frame_terms(float(p))

    offset = 1.0 - n * kappa
    dD_dp, dD_dn = -n * dkappa, -kappa
    if offset <= min_margin:
        if strict:
            raise SingularOffset(f"1 - n*kappa = {offset:.4f} at p={p:.3f}, n={n:.3f}")
        offset, dD_dp, dD_dn = min_margin, 0.0, 0.0

    c, s = math.cos(omega), math.sin(omega)
    tan_beta = math.tan(beta)
    s_dot = v * c / offset
    ds_dp = -s_dot / offset * dD_dp
    ds_dn = -s_dot / offset * dD_dn
    ds_domega = -v * s / offset
    ds_dv = c / offset

    x_next = np.array([
        p + dt * s_dot / g,
        n + dt * v * s,
        omega + dt * (v * tan_beta / wheelbase - kappa * s_dot),
        v + dt * a,
        a + dt * jerk,
        beta + dbeta * dt / control_dt,
    ])

    jac_x = np.eye(STATE_SIZE)
    jac_x[P, P] += dt * (ds_dp / g - s_dot * dg / (g * g))
    jac_x[P, N] = dt * ds_dn / g
    jac_x[P, OMEGA] = dt * ds_domega / g
    jac_x[P, V] = dt * ds_dv / g
    jac_x[N, OMEGA] = dt * v * c
    jac_x[N, V] = dt * s
    jac_x[OMEGA, P] = dt * (-dkappa * s_dot - kappa * ds_dp)
    jac_x[OMEGA, N] = dt * (-kappa * ds_dn)
    jac_x[OMEGA, OMEGA] += dt * (-kappa * ds_domega)
    jac_x[OMEGA, V] = dt * (tan_beta / wheelbase - kappa * ds_dv)
    jac_x[OMEGA, BETA] = dt * v / (wheelbase * math.cos(beta) ** 2)
    jac_x[V, A] = dt

    jac_u = np.zeros((STATE_SIZE, CONTROL_SIZE))
    jac_u[A, J] = dt
    jac_u[BETA, DBETA] = dt / control_dt
    return x_next, jac_x, jac_u


def dynamics_step(
    x: MpcState,
    u: MpcControl,
    dt: float,
    baseline: Baseline,
    wheelbase: float = 3.0,
    strict: bool = True,
    control_dt: Optional[float] = None,
    min_margin: float = 0.05,
) -> MpcState:
    """
    One explicit Euler step of the curvilinear bicycle.

    Args:
        x: Current state
        u: Control held over the step
        dt: Step length (s)
        baseline: Reference spline
        wheelbase: Axle distance (m)
        strict: Raise SingularOffset when 1 - n*kappa <= min_margin; otherwise clamp it
        control_dt: Duration one dbeta is spread over (default dt)
        min_margin: Smallest admissible 1 - n*kappa

    Returns:
        Next state
    """
    if not baseline.contains(x.p):
        raise DomainError(f"state progress {x.p:.4f} outside baseline domain {baseline.domain}")
    x_next, _, _ = _step(x.as_array(), u.as_array(), dt, baseline, wheelbase,
                         control_dt or dt, strict, min_margin)
    return MpcState.from_array(x_next)


# -- constraints ------------------------------------------------------------

def footprint_rows(states: np.ndarray, steps: np.ndarray, baseline: Baseline, tube: LateralTube,
                   geometry: VehicleGeometry, soft: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Corner residuals (front-left, front-right, rear-left, rear-right) and their state Jacobians.

    Args:
        states: (m, 6) states
        steps: (m,) tube timestep of each state
        soft: Use the soft tube splines instead of the hard ones

    Returns:
        (residuals (m, 4), jacobians (m, 4, 6)); residual <= 0 means inside
    """
    states = np.atleast_2d(states)
    steps = np.asarray(steps, dtype=int).reshape(-1)
    p, n, omega = states[:, P], states[:, N], states[:, OMEGA]
    g, dg = baseline.scale_terms(p)
    c, s = np.cos(omega), np.sin(omega)
    front, rear, half = geometry.front, geometry.rear, 0.5 * geometry.width
    left_name, right_name = ('left_soft', 'right_soft') if soft else ('left_hard', 'right_hard')

    p_front = p + front * c / g
    p_rear = p - rear * c / g
    dpf_dp = 1.0 - front * c * dg / (g * g)
    dpf_domega = -front * s / g
    dpr_dp = 1.0 + rear * c * dg / (g * g)
    dpr_domega = rear * s / g

    left_f = tube.evaluate_rows(left_name, steps, p_front)
    right_f = tube.evaluate_rows(right_name, steps, p_front)
    left_r = tube.evaluate_rows(left_name, steps, p_rear)
    right_r = tube.evaluate_rows(right_name, steps, p_rear)
    dleft_f = tube.evaluate_rows(left_name, steps, p_front, 1)
    dright_f = tube.evaluate_rows(right_name, steps, p_front, 1)
    dleft_r = tube.evaluate_rows(left_name, steps, p_rear, 1)
    dright_r = tube.evaluate_rows(right_name, steps, p_rear, 1)

    residuals = np.column_stack([
        n + half + front * s - left_f,
        -n + half - front * s + right_f,
        n + half - rear * s - left_r,
        -n + half + rear * s + right_r,
    ])

    jac = np.zeros((len(p), 4, STATE_SIZE))
    jac[:, 0, P] = -dleft_f * dpf_dp
    jac[:, 0, N] = 1.0
    jac[:, 0, OMEGA] = front * c - dleft_f * dpf_domega
    jac[:, 1, P] = dright_f * dpf_dp
    jac[:, 1, N] = -1.0
    jac[:, 1, OMEGA] = -front * c + dright_f * dpf_domega
    jac[:, 2, P] = -dleft_r * dpr_dp
    jac[:, 2, N] = 1.0
    jac[:, 2, OMEGA] = -rear * c - dleft_r * dpr_domega
    jac[:, 3, P] = dright_r * dpr_dp
    jac[:, 3, N] = -1.0
    jac[:, 3, OMEGA] = rear * c + dright_r * dpr_domega
    return residuals, jac


def footprint_constraints(x: MpcState, maneuver: Maneuver, t: int,
                          geometry: VehicleGeometry = VehicleGeometry()) -> np.ndarray:
    """Four hard-tube corner residuals of one state; all <= 0 iff the footprint is inside."""
    residuals, _ = footprint_rows(x.as_array()[None, :], np.array([t]), maneuver.baseline, maneuver.tube, geometry)
    return residuals[0]


# -- cost -------------------------------------------------------------------

class MpcCost:
    """
    Stage and terminal costs of a maneuver.

    State terms: tracking (or speed-limit pull when tracking is absent),
    lateral offset, relative heading and the squared soft-tube excess.
    Control terms: jerk and steering increment. The terminal state weighs
    the tracking term terminal_factor times.
    """

    def __init__(self, maneuver: Maneuver, params: MpcParams):
        self.maneuver = maneuver
        self.params = params
        self.horizon_steps = maneuver.horizon_steps

    def state_terms(self, states: np.ndarray, steps: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Per-row state cost and gradient for states at the given timesteps."""
        prm = self.params
        states = np.atleast_2d(states)
        steps = np.asarray(steps, dtype=int).reshape(-1)
        weight = np.where(steps == self.horizon_steps, prm.terminal_factor, 1.0)
        grad = np.zeros_like(states)
        tracking = self.maneuver.tracking

        if tracking.present:
            dp = states[:, P] - tracking.p_ref[steps]
            dv = states[:, V] - tracking.v_ref[steps]
            da = states[:, A] - tracking.a_ref[steps]
            value = prm.w_track * weight * (dp * dp + dv * dv + da * da)
            grad[:, P] = 2.0 * prm.w_track * weight * dp
            grad[:, V] = 2.0 * prm.w_track * weight * dv
            grad[:, A] = 2.0 * prm.w_track * weight * da
        else:
            dv = states[:, V] - prm.v_limit
            value = prm.w_speed * weight * dv * dv
            grad[:, V] = 2.0 * prm.w_speed * weight * dv

        n, omega = states[:, N], states[:, OMEGA]
        value = value + prm.w_n * n * n + prm.w_omega * omega * omega
        grad[:, N] += 2.0 * prm.w_n * n
        grad[:, OMEGA] += 2.0 * prm.w_omega * omega

        residuals, jac = footprint_rows(states, steps, self.maneuver.baseline, self.maneuver.tube,
                                        prm.vehicle, soft=True)
        excess = np.maximum(residuals, 0.0)
        value = value + prm.w_soft * np.sum(excess * excess, axis=1)
        grad += 2.0 * prm.w_soft * np.einsum('mr,mri->mi', excess, jac)
        return value, grad

    def control_terms(self, controls: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        controls = np.atleast_2d(controls)
        w = np.array([self.params.w_j, self.params.w_dbeta])
        return controls * controls @ w, 2.0 * controls * w

    def stage(self, x: MpcState, u: MpcControl, k: int) -> float:
        state_value, _ = self.state_terms(x.as_array(), [k])
        control_value, _ = self.control_terms(u.as_array())
        return float(state_value[0] + control_value[0])

    def terminal(self, x: MpcState) -> float:
        value, _ = self.state_terms(x.as_array(), [self.horizon_steps])
        return float(value[0])


def build_cost(maneuver: Maneuver, params: MpcParams) -> MpcCost:
    return MpcCost(maneuver, params)


# -- shooting problem -------------------------------------------------------

class ShootingProblem:
    """Single-shooting NLP over the flattened controls (j_0, dbeta_0, j_1, ...)."""

    def __init__(self, maneuver: Maneuver, x0: MpcState, params: MpcParams):
        self.maneuver = maneuver
        self.params = params
        self.baseline = maneuver.baseline
        self.horizon = maneuver.horizon_steps
        self.dt = maneuver.dt
        self.x0 = x0.as_array()
        self.cost = MpcCost(maneuver, params)
        self.steps = np.arange(1, self.horizon + 1)

        bounds = maneuver.bounds
        lo, _ = self.baseline.domain
        self.station_upper = self.baseline.station_of(bounds.p_upper[1:])
        self.lower_imposed = bounds.p_lower[1:] > lo + 1e-9
        self.station_lower = self.baseline.station_of(bounds.p_lower[1:])
        mask = np.ones((self.horizon, ROWS_PER_STEP), dtype=bool)
        mask[:, 5] = self.lower_imposed
        self.row_mask = mask.reshape(-1)
        self._cache_key = None
        self._cache = None

    @property
    def n_variables(self) -> int:
        return CONTROL_SIZE * self.horizon

    def box(self) -> Tuple[np.ndarray, np.ndarray]:
        prm = self.params
        lower = np.tile([prm.j_min, -prm.dbeta_max], self.horizon)
        upper = np.tile([prm.j_max, prm.dbeta_max], self.horizon)
        return lower, upper

    def rollout(self, controls: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """States (H + 1, 6) and per-step Jacobians A (H, 6, 6), B (H, 6, 2)."""
        key = controls.tobytes()
        if key == self._cache_key:
            return self._cache
        u = controls.reshape(self.horizon, CONTROL_SIZE)
        states = np.zeros((self.horizon + 1, STATE_SIZE))
        jac_x = np.zeros((self.horizon, STATE_SIZE, STATE_SIZE))
        jac_u = np.zeros((self.horizon, STATE_SIZE, CONTROL_SIZE))
        states[0] = self.x0
        for k in range(self.horizon):
            states[k + 1], jac_x[k], jac_u[k] = _step(
                states[k], u[k], self.dt, self.baseline, self.params.vehicle.wheelbase,
                self.dt, False, self.params.min_offset_margin,
            )
        self._cache_key = key
        self._cache = (states, jac_x, jac_u)
        return self._cache

    def objective(self, controls: np.ndarray) -> Tuple[float, np.ndarray]:
        states, jac_x, jac_u = self.rollout(controls)
        u = controls.reshape(self.horizon, CONTROL_SIZE)
        state_values, state_grads = self.cost.state_terms(states[1:], self.steps)
        control_values, control_grads = self.cost.control_terms(u)

        # Adjoint sweep: lam_k = dJ/dx_k
        grad = np.zeros_like(u)
        lam = state_grads[-1]
        for k in range(self.horizon - 1, -1, -1):
            grad[k] = control_grads[k] + jac_u[k].T @ lam
            if k > 0:
                lam = state_grads[k - 1] + jac_x[k].T @ lam
        return float(np.sum(state_values) + np.sum(control_values)), grad.reshape(-1)

    def state_rows(self, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """All 12 candidate rows per step for states 1..H, with state Jacobians."""
        prm = self.params
        geometry = prm.vehicle
        x = states[1:]
        rows = np.zeros((self.horizon, ROWS_PER_STEP))
        jac = np.zeros((self.horizon, ROWS_PER_STEP, STATE_SIZE))

        rows[:, 0:4], jac[:, 0:4] = footprint_rows(x, self.steps, self.baseline, self.maneuver.tube, geometry)

        station, slope = self.baseline.station_extended(x[:, P])
        c, s = np.cos(x[:, OMEGA]), np.sin(x[:, OMEGA])
        rows[:, 4] = station + geometry.front * c - self.station_upper
        jac[:, 4, P] = slope
        jac[:, 4, OMEGA] = -geometry.front * s
        rows[:, 5] = self.station_lower - (station - geometry.rear * c)
        jac[:, 5, P] = -slope
        jac[:, 5, OMEGA] = -geometry.rear * s

        rows[:, 6] = x[:, BETA] - prm.beta_max
        jac[:, 6, BETA] = 1.0
        rows[:, 7] = -x[:, BETA] - prm.beta_max
        jac[:, 7, BETA] = -1.0
        rows[:, 8] = x[:, A] - prm.a_max
        jac[:, 8, A] = 1.0
        rows[:, 9] = prm.a_min - x[:, A]
        jac[:, 9, A] = -1.0
        rows[:, 10] = x[:, V] - prm.v_max
        jac[:, 10, V] = 1.0
        rows[:, 11] = -x[:, V]
        jac[:, 11, V] = -1.0
        return rows, jac

    def constraints(self, controls: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        states, jac_x, jac_u = self.rollout(controls)
        rows, jac_rows = self.state_rows(states)

        # Forward sensitivities S_k = dx_k / dU
        sens = np.zeros((self.horizon + 1, STATE_SIZE, self.n_variables))
        for k in range(self.horizon):
            sens[k + 1] = jac_x[k] @ sens[k]
            sens[k + 1][:, CONTROL_SIZE * k:CONTROL_SIZE * (k + 1)] += jac_u[k]
        full = np.einsum('kri,kij->krj', jac_rows, sens[1:])

        values = rows.reshape(-1)[self.row_mask]
        jacobian = full.reshape(-1, self.n_variables)[self.row_mask]
        return values, jacobian

    def as_nlp(self) -> NlpProblem:
        lower, upper = self.box()
        return NlpProblem(self.n_variables, self.objective, self.constraints, lower, upper)

    def solution(self, controls: np.ndarray, report: SolveReport) -> MpcSolution:
        states, _, _ = self.rollout(controls)
        residuals, _ = footprint_rows(states[1:], self.steps, self.baseline, self.maneuver.tube, self.params.vehicle)
        cost, _ = self.objective(controls)
        return MpcSolution(
            states=states.copy(),
            controls=controls.reshape(self.horizon, CONTROL_SIZE).copy(),
            report=report,
            cartesian=states_to_cartesian(self.baseline, states),
            cost=cost,
            max_footprint_residual=float(np.max(residuals)),
        )


def warm_controls(previous: Optional[MpcSolution], horizon: int, shift_steps: int = 1) -> np.ndarray:
    """Previous controls shifted by shift_steps and padded with zeros."""
    controls = np.zeros((horizon, CONTROL_SIZE))
    if previous is not None:
        kept = previous.controls[shift_steps:shift_steps + horizon]
        controls[:len(kept)] = kept
    return controls.reshape(-1)


def solve(
    maneuver: Maneuver,
    x0: MpcState,
    params: MpcParams = MpcParams(),
    warm_start: Optional[MpcSolution] = None,
    shift_steps: int = 1,
) -> MpcSolution:
    """
    Solve the maneuver from x0.

    Args:
        maneuver: Baseline, tube, bounds and references
        x0: Initial state (progress inside the baseline domain)
        params: Weights, limits and solver tolerances
        warm_start: Previous solution; its controls (shifted) and multipliers seed the solve
        shift_steps: MPC steps elapsed since the warm start was computed

    Returns:
        MpcSolution

    Raises:
        DomainError: x0 outside the baseline domain
        SolverFailed: No iterate within feasibility_tol; carries the best iterate
    """
    if not maneuver.baseline.contains(x0.p):
        raise DomainError(f"initial progress {x0.p:.4f} outside baseline domain {maneuver.baseline.domain}")
    started = time.perf_counter()
    problem = ShootingProblem(maneuver, x0, params)
    nlp = problem.as_nlp()
    lower, upper = problem.box()
    init = np.clip(warm_controls(warm_start, problem.horizon, shift_steps), lower, upper)

    multipliers = penalty = None
    if warm_start is not None and warm_start.report.multipliers is not None:
        multipliers, penalty = warm_start.report.multipliers, warm_start.report.penalty

    controls, report = solve_nlp(
        nlp, init,
        tol=params.tol,
        max_outer=params.max_outer,
        inner_max_iter=params.inner_max_iter,
        multipliers=multipliers,
        penalty=penalty,
    )
    solution = problem.solution(controls, report)
    logger.debug(f"MPC {report.status.value}: cost {solution.cost:.3f}, violation {report.primal_residual:.2e}, "
                 f"{report.iterations} iterations, {(time.perf_counter() - started) * 1000:.1f}ms")

    failed = report.status == SolveStatus.INFEASIBLE or (
        report.status == SolveStatus.MAX_ITER and report.primal_residual > params.feasibility_tol)
    if failed:
        raise SolverFailed(
            f"MPC {report.status.value} with violation {report.primal_residual:.3g}",
            solution=solution,
            violation=report.primal_residual,
        )
    return solution


# -- frame conversions ------------------------------------------------------

def _wrap(angle):
    return (np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi


def states_to_cartesian(baseline: Baseline, states: np.ndarray) -> np.ndarray:
    """(x, y, heading) of the rear axle for each state row; beyond the domain the end tangent is extended."""
    states = np.atleast_2d(states)
    p = baseline.clamp(states[:, P])
    beyond = baseline.station_extended(states[:, P])[0] - baseline.station_extended(p)[0]
    xy = baseline.to_cartesian(p, states[:, N]) + beyond[:, None] * baseline.eval_tangent(p)
    heading = _wrap(np.asarray(baseline.heading_at(p)) + states[:, OMEGA])
    return np.column_stack([xy, heading])


def to_mpc_state(baseline: Baseline, av_state: VehicleState, num_samples: int = 64) -> MpcState:
    p, n, _, _ = project_points(baseline, np.array([[av_state.x, av_state.y]]), num_samples)
    omega = float(_wrap(av_state.heading - baseline.heading_at(float(p[0]))))
    return MpcState(float(p[0]), float(n[0]), omega, av_state.v, av_state.a, av_state.beta)


def to_vehicle_state(baseline: Baseline, state: MpcState) -> VehicleState:
    x, y, heading = states_to_cartesian(baseline, state.as_array())[0]
    return VehicleState(float(x), float(y), float(heading), state.v, state.a, state.beta)


def braking_fallback(av_state: VehicleState, params: MpcParams, dt: float) -> VehicleState:
    """
    Advance the Cartesian bicycle one step toward brake_decel with steering held.

    Jerk is limited to [j_min, j_max]; speed never goes negative and the
    acceleration is released once the vehicle has stopped.
    """
    jerk = float(np.clip((params.brake_decel - av_state.a) / dt, params.j_min, params.j_max))
    a = av_state.a + jerk * dt
    v = av_state.v + a * dt
    if v <= 0.0:
        v, a = 0.0, 0.0
    heading = av_state.heading + dt * v * math.tan(av_state.beta) / params.vehicle.wheelbase
    return VehicleState(
        x=av_state.x + dt * v * math.cos(av_state.heading),
        y=av_state.y + dt * v * math.sin(av_state.heading),
        heading=float(_wrap(heading)),
        v=v,
        a=a,
        beta=av_state.beta,
    )


def execute_first_control(solution: MpcSolution, baseline: Baseline, dt: float, params: MpcParams,
                          control_dt: float) -> VehicleState:
    """Apply the first planned control for dt seconds and return the Cartesian result."""
    x0 = solution.state(0)
    x_next, _, _ = _step(x0.as_array(), solution.controls[0], dt, baseline, params.vehicle.wheelbase,
                         control_dt, False, params.min_offset_margin)
    x_next[V] = max(x_next[V], 0.0)
    return to_vehicle_state(baseline, MpcState.from_array(x_next))
