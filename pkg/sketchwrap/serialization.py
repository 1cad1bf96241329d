"""
JSON encoding of sketches, scenes, scenarios, maneuvers and MPC solutions.
"""

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from sketchwrap.config_manager import Mode
from sketchwrap.geometry import Baseline, Polyline, Sketch, Waypoint
from sketchwrap.maneuver import (
    AgentPrediction,
    LateralTube,
    LongitudinalBounds,
    Maneuver,
    MapRaster,
    Scene,
    TrackingReferences,
    VehicleState,
)
from sketchwrap.optim import SolveReport, SolveStatus
from sketchwrap.scenarios import AgentTrack, AvTrack, Scenario

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def sanitize_for_json(obj: Any) -> Any:
    """
    Convert numpy values and enums into plain JSON types.

    Args:
        obj: Object that may contain arrays, numpy scalars or enums

    Returns:
        Sanitized object
    """
    if isinstance(obj, np.ndarray):
        return sanitize_for_json(obj.tolist())
    elif isinstance(obj, np.bool_):
        return bool(obj)
    elif isinstance(obj, np.integer):
        return int(obj)
    elif isinstance(obj, np.floating):
        return float(obj)
    elif isinstance(obj, Enum):
        return obj.value
    elif isinstance(obj, dict):
        return {k: sanitize_for_json(v) for k, v in obj.items()}
    elif isinstance(obj, (list, tuple)):
        return [sanitize_for_json(item) for item in obj]
    else:
        return obj


def dumps(obj: Any, indent: Optional[int] = None) -> str:
    return json.dumps(sanitize_for_json(obj), indent=indent)


# -- sketches and scenes ----------------------------------------------------

def sketch_to_dict(sketch: Sketch) -> Dict[str, Any]:
    return {'waypoints': [[w.x, w.y] if w.t is None else [w.x, w.y, w.t] for w in sketch.waypoints]}


def sketch_from_dict(data: Dict[str, Any]) -> Sketch:
    """Waypoints as [x, y] or [x, y, t] lists, or {"x", "y", "t"} objects."""
    waypoints = []
    for entry in data['waypoints']:
        if isinstance(entry, dict):
            waypoints.append(Waypoint(float(entry['x']), float(entry['y']),
                                      None if entry.get('t') is None else float(entry['t'])))
        else:
            t = float(entry[2]) if len(entry) > 2 and entry[2] is not None else None
            waypoints.append(Waypoint(float(entry[0]), float(entry[1]), t))
    return Sketch(tuple(waypoints))


def map_to_dict(map_raster: MapRaster) -> Dict[str, Any]:
    rows = [''.join('1' if cell else '0' for cell in row) for row in map_raster.drivable]
    return {'origin': list(map_raster.origin), 'resolution': map_raster.resolution, 'rows': rows}


def map_from_dict(data: Dict[str, Any]) -> MapRaster:
    """Row 0 is the lowest y; '1' marks a drivable voxel."""
    grid = np.array([[ch == '1' for ch in row] for row in data['rows']], dtype=bool)
    return MapRaster(tuple(data['origin']), float(data['resolution']), grid)


def prediction_to_dict(prediction: AgentPrediction) -> Dict[str, Any]:
    return {'agent_id': prediction.agent_id, 'hulls': [h.tolist() for h in prediction.hulls]}


def prediction_from_dict(data: Dict[str, Any]) -> AgentPrediction:
    return AgentPrediction(str(data['agent_id']), tuple(np.array(h, dtype=float) for h in data['hulls']))


def vehicle_state_to_dict(state: VehicleState) -> Dict[str, float]:
    return {'x': state.x, 'y': state.y, 'heading': state.heading, 'v': state.v, 'a': state.a, 'beta': state.beta}


def vehicle_state_from_dict(data: Dict[str, Any]) -> VehicleState:
    return VehicleState(
        float(data['x']), float(data['y']), float(data.get('heading', 0.0)),
        float(data.get('v', 0.0)), float(data.get('a', 0.0)), float(data.get('beta', 0.0)),
    )


def scene_from_dict(data: Dict[str, Any]) -> Scene:
    map_raster = map_from_dict(data['map']) if data.get('map') else None
    predictions = tuple(prediction_from_dict(p) for p in data.get('predictions', []))
    return Scene(map_raster, predictions)


def scene_to_dict(scene: Scene) -> Dict[str, Any]:
    return {
        'map': map_to_dict(scene.map) if scene.map is not None else None,
        'predictions': [prediction_to_dict(p) for p in scene.predictions],
    }


# -- scenarios --------------------------------------------------------------

def scenario_to_dict(scenario: Scenario) -> Dict[str, Any]:
    return {
        'schema_version': SCHEMA_VERSION,
        'scenario_id': scenario.scenario_id,
        'family': scenario.family,
        'seed': scenario.seed,
        'duration': scenario.duration,
        'sim_rate': scenario.sim_rate,
        'warmup': scenario.warmup,
        'map': map_to_dict(scenario.map),
        'av_init': vehicle_state_to_dict(scenario.av_init),
        'av_track': None if scenario.av_track is None else {
            'times': scenario.av_track.times, 'states': scenario.av_track.states},
        'route': scenario.route.points,
        'goal': list(scenario.goal),
        'agents': [
            {'agent_id': a.agent_id, 'kind': a.kind, 'times': a.times, 'poses': a.poses, 'footprint': a.footprint}
            for a in scenario.agents
        ],
    }


def scenario_from_dict(data: Dict[str, Any]) -> Scenario:
    """
    Raises:
        ValueError: Unsupported schema_version or invalid content
    """
    version = data.get('schema_version')
    if version != SCHEMA_VERSION:
        raise ValueError(f"Unsupported scenario schema_version {version!r} (expected {SCHEMA_VERSION})")
    track = data.get('av_track')
    return Scenario(
        scenario_id=str(data['scenario_id']),
        map=map_from_dict(data['map']),
        av_init=vehicle_state_from_dict(data['av_init']),
        route=Polyline(data['route']),
        goal=tuple(float(v) for v in data['goal']),
        agents=tuple(
            AgentTrack(str(a['agent_id']), np.array(a['times'], dtype=float), np.array(a['poses'], dtype=float),
                       np.array(a['footprint'], dtype=float), a.get('kind', 'vehicle'))
            for a in data.get('agents', [])
        ),
        duration=float(data['duration']),
        sim_rate=float(data['sim_rate']),
        warmup=float(data['warmup']),
        av_track=None if track is None else AvTrack(np.array(track['times'], dtype=float),
                                                    np.array(track['states'], dtype=float)),
        family=data.get('family', 'custom'),
        seed=data.get('seed'),
    )


def save_scenario(scenario: Scenario, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(scenario_to_dict(scenario)))


def load_scenario(path: Path) -> Scenario:
    with open(path, 'r') as f:
        return scenario_from_dict(json.load(f))


# -- maneuvers and solutions ------------------------------------------------

def maneuver_to_dict(maneuver: Maneuver) -> Dict[str, Any]:
    tracking = maneuver.tracking
    return {
        'mode': maneuver.mode.value,
        'horizon_steps': maneuver.horizon_steps,
        'dt': maneuver.dt,
        'baseline': {'control_points': maneuver.baseline.control_points, 'domain': list(maneuver.baseline.domain)},
        'tracking': {
            'present': tracking.present,
            'p_ref': tracking.p_ref,
            'v_ref': tracking.v_ref,
            'a_ref': tracking.a_ref,
        },
        'tube': {name: getattr(maneuver.tube, name) for name in ('left_hard', 'left_soft', 'right_hard', 'right_soft')},
        'bounds': {'p_lower': maneuver.bounds.p_lower, 'p_upper': maneuver.bounds.p_upper},
        'notes': list(maneuver.notes),
    }


def maneuver_from_dict(data: Dict[str, Any]) -> Maneuver:
    tracking = data['tracking']
    if tracking.get('present'):
        refs = TrackingReferences(True, np.array(tracking['p_ref']), np.array(tracking['v_ref']), np.array(tracking['a_ref']))
    else:
        refs = TrackingReferences.absent()
    tube = data['tube']
    return Maneuver(
        baseline=Baseline(np.array(data['baseline']['control_points'])),
        tracking=refs,
        tube=LateralTube(*(np.array(tube[name]) for name in ('left_hard', 'left_soft', 'right_hard', 'right_soft'))),
        bounds=LongitudinalBounds(np.array(data['bounds']['p_lower']), np.array(data['bounds']['p_upper']),
                                  tuple(data.get('notes', ()))),
        horizon_steps=int(data['horizon_steps']),
        dt=float(data['dt']),
        mode=Mode.parse(data['mode']),
        notes=tuple(data.get('notes', ())),
    )


def report_to_dict(report: SolveReport) -> Dict[str, Any]:
    return {
        'status': report.status.value,
        'iterations': report.iterations,
        'primal_residual': report.primal_residual,
        'dual_residual': report.dual_residual,
        'objective': report.objective,
    }


def report_from_dict(data: Dict[str, Any]) -> SolveReport:
    return SolveReport(SolveStatus(data['status']), int(data['iterations']), float(data['primal_residual']),
                       float(data['dual_residual']), float(data['objective']))


def solution_to_dict(solution) -> Dict[str, Any]:
    return {
        'states': solution.states,
        'controls': solution.controls,
        'cartesian': solution.cartesian,
        'cost': solution.cost,
        'max_footprint_residual': solution.max_footprint_residual,
        'report': report_to_dict(solution.report),
    }


def solution_from_dict(data: Dict[str, Any]):
    from sketchwrap.mpc import MpcSolution

    return MpcSolution(
        states=np.array(data['states'], dtype=float),
        controls=np.array(data['controls'], dtype=float),
        report=report_from_dict(data['report']),
        cartesian=np.array(data['cartesian'], dtype=float),
        cost=float(data.get('cost', 0.0)),
        max_footprint_residual=float(data.get('max_footprint_residual', 0.0)),
    )
