"""
Closed-loop simulation
======================

Replays non-reactive agents, feeds the planner oracle predictions, runs the
wrapper and the MPC every cycle and executes the first control with the same
bicycle model. During warmup the AV follows its ground-truth track and the
planner is not consulted.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from sketchwrap.collision import front_collision, rectangle
from sketchwrap.config_manager import Params, SimParams, VehicleGeometry, WrapperConfig
from sketchwrap.errors import SketchwrapError, SolverFailed
from sketchwrap.geometry import Sketch
from sketchwrap.logger import log_cycle, log_fallback
from sketchwrap.maneuver import AgentPrediction, Maneuver, MapRaster, Scene, VehicleState, extract_maneuver
from sketchwrap.mpc import MpcSolution, braking_fallback, execute_first_control, solve, to_mpc_state
from sketchwrap.planners import Planner, PlanningContext
from sketchwrap.scenarios import Scenario
from sketchwrap.serialization import (
    SCHEMA_VERSION,
    dumps,
    map_from_dict,
    map_to_dict,
    maneuver_from_dict,
    maneuver_to_dict,
    prediction_from_dict,
    prediction_to_dict,
    sketch_from_dict,
    sketch_to_dict,
    solution_from_dict,
    solution_to_dict,
    vehicle_state_from_dict,
    vehicle_state_to_dict,
)

logger = logging.getLogger(__name__)

DECEL_POINTS = ([10.0, 20.0], [2.5, 1.5])
ACCEL_POINTS = ([10.0, 15.0], [2.0, 1.0])


def decel_threshold(v: float) -> float:
    """Comfortable deceleration magnitude: 2.5 m/s^2 up to 10 m/s, 1.5 from 20 m/s."""
    return float(np.interp(v, *DECEL_POINTS))


def accel_threshold(v: float) -> float:
    """Comfortable acceleration: 2.0 m/s^2 up to 10 m/s, 1.0 from 15 m/s."""
    return float(np.interp(v, *ACCEL_POINTS))


# -- predictions ------------------------------------------------------------

def oracle_predict(scenario: Scenario, t: float, horizon: int, dt: float) -> Tuple[AgentPrediction, ...]:
    """Ground-truth agent hulls on the horizon grid, frozen at the last pose past the scenario end."""
    grid = np.minimum(t + np.arange(horizon + 1) * dt, scenario.duration)
    return tuple(
        AgentPrediction(agent.agent_id, tuple(agent.hull_at(tk) for tk in grid))
        for agent in scenario.agents
    )


# -- log --------------------------------------------------------------------

@dataclass
class CycleRecord:
    t: float
    av_state: VehicleState
    agent_poses: Dict[str, np.ndarray]
    planned: bool = False
    sketch: Optional[Sketch] = None
    predictions: Tuple[AgentPrediction, ...] = ()
    maneuver: Optional[Maneuver] = None
    solution: Optional[MpcSolution] = None
    failed: bool = False
    failure_reason: Optional[str] = None
    runtime_ms: Optional[float] = None


@dataclass
class SimLog:
    scenario_id: str
    mode: str
    use_tracking: bool
    planner: str
    map: Optional[MapRaster] = None
    records: List[CycleRecord] = field(default_factory=list)

    @property
    def solver_fail_count(self) -> int:
        return sum(1 for r in self.records if r.failed)

    @property
    def runtime_ms_mean(self) -> float:
        runtimes = [r.runtime_ms for r in self.records if r.planned and r.runtime_ms is not None]
        return float(np.mean(runtimes)) if runtimes else float('nan')


def _record_to_dict(record: CycleRecord, include_timing: bool) -> Dict[str, Any]:
    out = {
        'type': 'cycle',
        't': record.t,
        'av_state': vehicle_state_to_dict(record.av_state),
        'agent_poses': record.agent_poses,
        'planned': record.planned,
        'failed': record.failed,
        'failure_reason': record.failure_reason,
        'sketch': sketch_to_dict(record.sketch) if record.sketch is not None else None,
        'predictions': [prediction_to_dict(p) for p in record.predictions],
        'maneuver': maneuver_to_dict(record.maneuver) if record.maneuver is not None else None,
        'solution': solution_to_dict(record.solution) if record.solution is not None else None,
    }
    if include_timing:
        out['runtime_ms'] = record.runtime_ms
    return out


def write_simlog(log: SimLog, path: Path, include_timing: bool = False):
    """
    Newline-delimited JSON: one header line, then one line per cycle.

    Runtimes are omitted unless include_timing is set so logs of identical
    runs are byte-identical.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        'type': 'header',
        'schema_version': SCHEMA_VERSION,
        'scenario_id': log.scenario_id,
        'mode': log.mode,
        'use_tracking': log.use_tracking,
        'planner': log.planner,
        'map': map_to_dict(log.map) if log.map is not None else None,
    }
    with open(path, 'w') as f:
        f.write(dumps(header) + '\n')
        for record in log.records:
            f.write(dumps(_record_to_dict(record, include_timing)) + '\n')
    logger.info(f"✅ SimLog written to {path} ({len(log.records)} cycles)")


def read_simlog(path: Path) -> SimLog:
    """
    Raises:
        ValueError: Missing or malformed header
    """
    with open(path, 'r') as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or lines[0].get('type') != 'header':
        raise ValueError(f"{path} is not a SimLog (missing header line)")
    header = lines[0]
    log = SimLog(
        scenario_id=header['scenario_id'],
        mode=header['mode'],
        use_tracking=bool(header.get('use_tracking', True)),
        planner=header.get('planner', ''),
        map=map_from_dict(header['map']) if header.get('map') else None,
    )
    for data in lines[1:]:
        log.records.append(CycleRecord(
            t=float(data['t']),
            av_state=vehicle_state_from_dict(data['av_state']),
            agent_poses={k: np.array(v) for k, v in data.get('agent_poses', {}).items()},
            planned=bool(data.get('planned')),
            sketch=sketch_from_dict(data['sketch']) if data.get('sketch') else None,
            predictions=tuple(prediction_from_dict(p) for p in data.get('predictions', [])),
            maneuver=maneuver_from_dict(data['maneuver']) if data.get('maneuver') else None,
            solution=solution_from_dict(data['solution']) if data.get('solution') else None,
            failed=bool(data.get('failed')),
            failure_reason=data.get('failure_reason'),
            runtime_ms=data.get('runtime_ms'),
        ))
    return log


# -- closed loop ------------------------------------------------------------

def plan_cycle(
    scenario: Scenario,
    planner: Planner,
    t: float,
    av_state: VehicleState,
    config: WrapperConfig,
    params: Params,
    warm_start: Optional[MpcSolution] = None,
) -> CycleRecord:
    """
    One planning cycle: planner, maneuver extraction and MPC solve.

    The returned record carries the sketch, maneuver and solution; failures
    are recorded (failed, failure_reason) rather than raised.
    """
    geometry = params.mpc.vehicle
    record = CycleRecord(t, av_state, {a.agent_id: a.pose_at(t) for a in scenario.agents}, planned=True)
    record.predictions = oracle_predict(scenario, t, config.horizon_steps, config.dt)
    context = PlanningContext(
        t=t,
        av_state=av_state,
        route=scenario.route,
        goal=scenario.goal,
        map=scenario.map,
        predictions=record.predictions,
        static_hulls=tuple(a.hull_at(t) for a in scenario.stationary_agents()),
        horizon_steps=config.horizon_steps,
        dt=config.dt,
        geometry=geometry,
    )
    try:
        record.sketch = planner.plan(context)
        record.maneuver = extract_maneuver(record.sketch, Scene(scenario.map, record.predictions), av_state, config, geometry)
        x0 = to_mpc_state(record.maneuver.baseline, av_state, config.projection_samples)
        record.solution = solve(record.maneuver, x0, params.mpc, warm_start=warm_start, shift_steps=0)
    except SolverFailed as e:
        record.failed = True
        record.failure_reason = str(e)
        record.solution = e.solution
    except SketchwrapError as e:
        record.failed = True
        record.failure_reason = f"{type(e).__name__}: {e}"
    return record


def run_closed_loop(
    scenario: Scenario,
    planner: Planner,
    config: WrapperConfig,
    params: Params = Params(),
) -> SimLog:
    """
    Simulate one scenario at its sim rate.

    Args:
        scenario: Scenario to replay
        planner: Sketch producer (reset before the run)
        config: Wrapper configuration (ablation mode)
        params: MPC and simulation parameters

    Returns:
        SimLog with one record per cycle
    """
    planner.reset()
    log = SimLog(scenario.scenario_id, config.mode.value, config.use_tracking, planner.name, scenario.map)
    times = scenario.cycle_times
    av_state = scenario.av_ground_truth(0.0)
    warm_start: Optional[MpcSolution] = None

    for index, t in enumerate(times):
        t = float(t)
        if t <= scenario.warmup + 1e-9:
            av_state = scenario.av_ground_truth(t)
        if t < scenario.warmup - 1e-9 or index == len(times) - 1:
            log.records.append(CycleRecord(t, av_state, {a.agent_id: a.pose_at(t) for a in scenario.agents}))
            continue

        started = time.perf_counter()
        record = plan_cycle(scenario, planner, t, av_state, config, params, warm_start)
        if record.failed:
            log_fallback(f"{scenario.scenario_id} t={t:.1f}", record.failure_reason)
            next_state = braking_fallback(av_state, params.mpc, scenario.dt)
            warm_start = None
        else:
            next_state = execute_first_control(record.solution, record.maneuver.baseline, scenario.dt,
                                               params.mpc, config.dt)
            warm_start = record.solution
        record.runtime_ms = (time.perf_counter() - started) * 1000.0
        log_cycle(scenario.scenario_id, t, config.mode.value, record.runtime_ms, record.failed)
        log.records.append(record)
        av_state = next_state

    return log


# -- metrics ----------------------------------------------------------------

@dataclass(frozen=True)
class MetricEvent:
    kind: str
    t: float
    agent_id: Optional[str] = None


@dataclass(frozen=True)
class MetricsReport:
    coll: int
    road: int
    accel: int
    dist: float
    stuck: bool
    events: Tuple[MetricEvent, ...] = ()


class _Episodes:
    """Counts violation episodes per key; gaps shorter than `debounce` merge."""

    def __init__(self, debounce: float, cycle_dt: float):
        self.debounce = debounce
        self.cycle_dt = cycle_dt
        self.last: Dict[Any, float] = {}

    def violation(self, key, t: float) -> bool:
        previous = self.last.get(key)
        self.last[key] = t
        return previous is None or (t - previous - self.cycle_dt) >= self.debounce - 1e-9


def av_rectangle(state: VehicleState, geometry: VehicleGeometry) -> np.ndarray:
    offset = 0.5 * (geometry.front - geometry.rear)
    center = (state.x + offset * math.cos(state.heading), state.y + offset * math.sin(state.heading))
    return rectangle(center, state.heading, geometry.front + geometry.rear, geometry.width)


def compute_metrics(
    log: SimLog,
    scenario: Scenario,
    sim_params: SimParams = SimParams(),
    geometry: VehicleGeometry = VehicleGeometry(),
) -> MetricsReport:
    """
    Collision, off-road and comfort episodes plus distance traveled after warmup.

    Coll counts overlaps whose contact point lies in the AV's front half, one
    per agent and episode. Road counts episodes with a footprint corner on a
    non-drivable voxel. Accel counts episodes beyond the speed-dependent
    comfort thresholds.
    """
    records = [r for r in log.records if r.t >= scenario.warmup - 1e-9]
    collisions = _Episodes(sim_params.debounce, scenario.dt)
    offroad = _Episodes(sim_params.debounce, scenario.dt)
    comfort = _Episodes(sim_params.debounce, scenario.dt)
    events: List[MetricEvent] = []
    coll = road = accel = 0

    for record in records:
        state = record.av_state
        footprint = av_rectangle(state, geometry)
        for agent in scenario.agents:
            if front_collision(footprint, state.heading, agent.hull_at(record.t)):
                if collisions.violation(agent.agent_id, record.t):
                    coll += 1
                    events.append(MetricEvent('coll', record.t, agent.agent_id))
        if not np.all(scenario.map.is_drivable(footprint)):
            if offroad.violation('road', record.t):
                road += 1
                events.append(MetricEvent('road', record.t))
        if state.a < -decel_threshold(state.v) or state.a > accel_threshold(state.v):
            if comfort.violation('accel', record.t):
                accel += 1
                events.append(MetricEvent('accel', record.t))

    positions = np.array([[r.av_state.x, r.av_state.y] for r in records]) if records else np.zeros((0, 2))
    dist = float(np.sum(np.linalg.norm(np.diff(positions, axis=0), axis=1))) if len(positions) > 1 else 0.0
    tail = [r for r in records if r.t >= scenario.duration - sim_params.stuck_window - 1e-9]
    stuck = bool(tail) and all(r.av_state.v < sim_params.stuck_speed for r in tail)
    return MetricsReport(coll, road, accel, dist, stuck, tuple(events))


# -- batch ------------------------------------------------------------------

def evaluate_scenario(
    scenario: Scenario,
    planner: Planner,
    config: WrapperConfig,
    params: Params = Params(),
    log_dir: Optional[Path] = None,
    timing: bool = False,
) -> Dict[str, Any]:
    """Run one scenario and return its metrics row (CSV column names)."""
    log = run_closed_loop(scenario, planner, config, params)
    metrics = compute_metrics(log, scenario, params.sim, params.mpc.vehicle)
    if log_dir is not None:
        write_simlog(log, Path(log_dir) / f"{scenario.scenario_id}__{config.mode.value}.ndjson", include_timing=timing)
    return {
        'scenario_id': scenario.scenario_id,
        'config': config.mode.value if config.use_tracking else f"{config.mode.value}-notrack",
        'coll': metrics.coll,
        'road': metrics.road,
        'accel': metrics.accel,
        'dist_m': metrics.dist,
        'runtime_ms_mean': log.runtime_ms_mean if timing else None,
        'solver_fail_count': log.solver_fail_count,
    }
