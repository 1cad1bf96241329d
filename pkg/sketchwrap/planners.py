"""
Sketch producers
================

Stand-ins for the experimental planners the wrapper protects:

- IDM: car-following rollout along the route (timed sketch)
- A*: static-only grid path to the goal (path sketch, no timestamps)
- Synthetic: deliberately bad sketches (through obstacles, off road, jagged, frozen)
- Fixture: recorded sketches replayed from JSON
"""

import heapq
import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from sketchwrap.collision import point_in_convex
from sketchwrap.config_manager import AStarParams, IdmParams, VehicleGeometry
from sketchwrap.errors import NoPath, SketchError
from sketchwrap.geometry import Polyline, Sketch
from sketchwrap.maneuver import AgentPrediction, MapRaster, VehicleState

logger = logging.getLogger(__name__)

GAP_FLOOR = 0.1
HEADINGS = 8
_MOVES = [(int(round(math.cos(h * math.pi / 4))), int(round(math.sin(h * math.pi / 4)))) for h in range(HEADINGS)]


# -- IDM --------------------------------------------------------------------

def idm_acceleration(v: float, params: IdmParams, gap: Optional[float] = None, lead_speed: Optional[float] = None) -> float:
    """
    Intelligent driver model acceleration, clamped to [-b_max, a_max].

    Without a lead only the free-road term applies.
    """
    free = 1.0 - (max(v, 0.0) / params.v0) ** params.delta
    interaction = 0.0
    if gap is not None:
        dv = v - (lead_speed or 0.0)
        s_star = params.s0 + v * params.T + v * dv / (2.0 * math.sqrt(params.a_max * params.b))
        interaction = (max(s_star, 0.0) / max(gap, GAP_FLOOR)) ** 2
    return float(np.clip(params.a_max * (free - interaction), -params.b_max, params.a_max))


def idm_rollout(
    av_long_state: Tuple[float, float],
    lead_track: Optional[Sequence[Tuple[float, float]]],
    route: Polyline,
    params: IdmParams = IdmParams(),
    horizon: int = 16,
    dt: float = 0.5,
) -> Sketch:
    """
    Roll the IDM out along the route and emit one timed waypoint per step.

    Args:
        av_long_state: (station of the rear axle along the route, speed)
        lead_track: Per step (distance from the AV's initial front bumper to the
            lead's rear, lead speed), or None on a free road
        route: Route line the AV follows
        params: IDM parameters
        horizon: Number of steps
        dt: Step length (s)

    Returns:
        Sketch with horizon + 1 waypoints at t = k * dt
    """
    stations = idm_stations(av_long_state, lead_track, params, horizon, dt)
    points = route.point_at(stations)
    return Sketch.from_arrays(points, np.arange(horizon + 1) * dt)


def idm_stations(
    av_long_state: Tuple[float, float],
    lead_track: Optional[Sequence[Tuple[float, float]]],
    params: IdmParams,
    horizon: int,
    dt: float,
) -> np.ndarray:
    """Route stations of the rollout, horizon + 1 values starting at the AV."""
    s0, v = av_long_state
    stations = [s0]
    s = s0
    v = max(v, 0.0)
    for k in range(horizon):
        if lead_track is not None and k < len(lead_track) and lead_track[k] is not None:
            lead_distance, lead_speed = lead_track[k]
            gap = lead_distance - (s - s0)
            a = idm_acceleration(v, params, gap, lead_speed)
        else:
            a = idm_acceleration(v, params)
        s += v * dt
        v = max(v + a * dt, 0.0)
        stations.append(s)
    return np.array(stations)


def lead_track_from_predictions(
    predictions: Sequence[AgentPrediction],
    route: Polyline,
    front_station: float,
    half_width: float,
    dt: float,
) -> Optional[List[Optional[Tuple[float, float]]]]:
    """
    Nearest in-lane agent ahead of the AV front bumper at each prediction step.

    Returns:
        Per step (distance from front_station to the lead's rear, lead speed) or
        None for steps without a lead; None when no step has one
    """
    steps = max((len(p.hulls) for p in predictions), default=0)
    if steps == 0:
        return None

    extents = {}
    for pred in predictions:
        rows = []
        for hull in pred.hulls:
            projected = np.array([route.project(x, y) for x, y in hull])
            in_lane = projected[:, 1].min() <= half_width and projected[:, 1].max() >= -half_width
            rows.append((projected[:, 0].min(), projected[:, 0].max(), in_lane))
        extents[pred.agent_id] = rows

    track: List[Optional[Tuple[float, float]]] = []
    for k in range(steps):
        best = None
        for agent_id, rows in extents.items():
            if k >= len(rows):
                continue
            s_min, s_max, in_lane = rows[k]
            if not in_lane or s_max <= front_station:
                continue
            nxt = rows[min(k + 1, len(rows) - 1)][0]
            prv = rows[max(k - 1, 0)][0]
            span = (min(k + 1, len(rows) - 1) - max(k - 1, 0)) * dt
            speed = max((nxt - prv) / span, 0.0) if span > 0 else 0.0
            if best is None or s_min < best[0]:
                best = (s_min, speed)
        track.append(None if best is None else (best[0] - front_station, best[1]))
    return track if any(entry is not None for entry in track) else None


# -- A* ---------------------------------------------------------------------

def heading_index(heading: float) -> int:
    return int(round(heading / (math.pi / 4))) % HEADINGS


def astar_path(
    map_raster: MapRaster,
    start: Tuple[float, float, float],
    goal: Tuple[float, float],
    params: AStarParams = AStarParams(),
) -> Sketch:
    """
    A* over (cell, heading) with moves turning at most one heading step.

    Move cost is the move length plus turn_penalty per heading step;
    the heuristic is the Euclidean distance to the goal cell. The start cell
    is exempt from the drivable check.

    Args:
        map_raster: Drivable grid (obstacles already rasterized in)
        start: (x, y, heading)
        goal: (x, y); any heading is accepted at the goal

    Returns:
        Sketch of cell centers, no timestamps

    Raises:
        NoPath: The open set was exhausted or max_expansions reached
    """
    res = map_raster.resolution
    sx, sy = map_raster.voxel_of(np.array(start[:2]))
    gx, gy = map_raster.voxel_of(np.array(goal[:2]))
    start_cell = (int(sx), int(sy))
    goal_cell = (int(gx), int(gy))

    if start_cell == goal_cell:
        center = map_raster.cell_center(*start_cell)
        nudge = center + 0.1 * np.array([math.cos(start[2]), math.sin(start[2])])
        return Sketch.from_arrays(np.vstack([center, nudge]))

    grid = map_raster.drivable
    height, width = grid.shape

    def heuristic(cell):
        return res * math.hypot(cell[0] - goal_cell[0], cell[1] - goal_cell[1])

    start_node = (start_cell[0], start_cell[1], heading_index(start[2]))
    best_cost = {start_node: 0.0}
    parents = {start_node: None}
    counter = 0
    open_set = [(heuristic(start_cell), counter, 0.0, start_node)]
    expansions = 0

    while open_set:
        _, _, cost, node = heapq.heappop(open_set)
        if cost > best_cost.get(node, math.inf):
            continue
        i, j, h = node
        if (i, j) == goal_cell:
            return _reconstruct(parents, node, map_raster)
        expansions += 1
        if expansions > params.max_expansions:
            break
        for dh in (-1, 0, 1):
            nh = (h + dh) % HEADINGS
            di, dj = _MOVES[nh]
            ni, nj = i + di, j + dj
            if not (0 <= ni < width and 0 <= nj < height) or not grid[nj, ni]:
                continue
            # No diagonal squeeze between two blocked orthogonal neighbors
            if di and dj and not grid[j, ni] and not grid[nj, i]:
                continue
            step = res * math.hypot(di, dj) + params.turn_penalty * abs(dh)
            nxt = (ni, nj, nh)
            new_cost = cost + step
            if new_cost < best_cost.get(nxt, math.inf):
                best_cost[nxt] = new_cost
                parents[nxt] = node
                counter += 1
                heapq.heappush(open_set, (new_cost + heuristic((ni, nj)), counter, new_cost, nxt))

    raise NoPath(f"no path from cell {start_cell} to {goal_cell} after {expansions} expansions")


def _reconstruct(parents, node, map_raster: MapRaster) -> Sketch:
    cells = []
    while node is not None:
        cells.append(node[:2])
        node = parents[node]
    cells.reverse()
    cells = np.array(cells)
    return Sketch.from_arrays(map_raster.cell_center(cells[:, 0], cells[:, 1]))


def rasterize_obstacles(map_raster: MapRaster, hulls: Sequence[np.ndarray], inflation: float) -> MapRaster:
    """Mark hull cells non-drivable, then erode the drivable area by `inflation` meters."""
    drivable = map_raster.drivable.copy()
    iy, ix = np.indices(drivable.shape)
    centers = map_raster.cell_center(ix.reshape(-1), iy.reshape(-1))
    for hull in hulls:
        inside = point_in_convex(hull, centers).reshape(drivable.shape)
        drivable &= ~inside
    radius = int(math.ceil(inflation / map_raster.resolution))
    if radius > 0:
        yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
        disk = (xx * xx + yy * yy) <= radius * radius
        drivable = ndimage.binary_erosion(drivable, structure=disk, border_value=1)
    return map_raster.with_drivable(drivable)


# -- synthetic --------------------------------------------------------------

class SyntheticKind(str, Enum):
    THROUGH_OBSTACLE = 'ThroughObstacle'
    OFF_ROAD = 'OffRoad'
    JAGGED = 'Jagged'
    STOPPED_FROZEN = 'StoppedFrozen'

    @classmethod
    def parse(cls, text: str) -> 'SyntheticKind':
        key = str(text).replace('_', '').replace('-', '').lower()
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ValueError(f"Unknown synthetic sketch '{text}' (expected one of {[k.value for k in cls]})")


OFF_ROAD_ANGLE = math.radians(-30.0)
OFF_ROAD_LENGTH = 60.0
JAGGED_OFFSET = 1.0
MIN_SYNTHETIC_SPEED = 8.0


def synthetic_sketch(
    kind: SyntheticKind,
    av_state: VehicleState,
    route: Polyline,
    obstacle_hulls: Sequence[np.ndarray] = (),
    horizon: int = 16,
    dt: float = 0.5,
) -> Sketch:
    """
    Adversarial sketches for rescue experiments.

    ThroughObstacle drives straight at >= 8 m/s through the first hull ahead
    (one waypoint lands on its center); OffRoad leaves the route at 30 degrees
    for 60 m; Jagged follows the route with alternating 1 m lateral offsets;
    StoppedFrozen repeats the initial pose.
    """
    kind = SyntheticKind.parse(kind) if not isinstance(kind, SyntheticKind) else kind
    origin = np.array([av_state.x, av_state.y])
    times = np.arange(horizon + 1) * dt
    speed = max(av_state.v, MIN_SYNTHETIC_SPEED)
    s_av, _ = route.project(av_state.x, av_state.y)

    if kind == SyntheticKind.STOPPED_FROZEN:
        nudge = origin + 0.1 * np.array([math.cos(av_state.heading), math.sin(av_state.heading)])
        return Sketch.from_arrays(np.vstack([origin, nudge]), [0.0, horizon * dt])

    if kind == SyntheticKind.OFF_ROAD:
        heading = route.heading_at(s_av) + OFF_ROAD_ANGLE
        steps = np.linspace(0.0, OFF_ROAD_LENGTH, horizon + 1)
        points = origin + steps[:, None] * np.array([math.cos(heading), math.sin(heading)])
        return Sketch.from_arrays(points, times)

    if kind == SyntheticKind.JAGGED:
        stations = s_av + speed * times
        signs = np.where(np.arange(horizon + 1) % 2 == 0, 1.0, -1.0)
        signs[0] = 0.0
        points = route.point_at(stations) + (JAGGED_OFFSET * signs)[:, None] * route.normal_at(stations)
        return Sketch.from_arrays(points, times)

    ahead = []
    for hull in obstacle_hulls:
        s_hull, _ = route.project(*hull.mean(axis=0))
        if s_hull > s_av:
            ahead.append((s_hull, hull))
    if not ahead:
        return Sketch.from_arrays(route.point_at(s_av + speed * times), times)
    _, hull = min(ahead, key=lambda item: item[0])
    target = hull.mean(axis=0)
    distance = float(np.linalg.norm(target - origin))
    direction = (target - origin) / distance
    hit_step = min(max(int(distance // (speed * dt)), 1), horizon)
    speed = distance / (hit_step * dt)
    points = origin + (speed * times)[:, None] * direction
    return Sketch.from_arrays(points, times)


# -- planner adapters -------------------------------------------------------

@dataclass(frozen=True)
class PlanningContext:
    """Everything a planner may look at in one cycle."""

    t: float
    av_state: VehicleState
    route: Polyline
    goal: Tuple[float, float]
    map: MapRaster
    predictions: Tuple[AgentPrediction, ...]
    static_hulls: Tuple[np.ndarray, ...]
    horizon_steps: int
    dt: float
    geometry: VehicleGeometry = VehicleGeometry()


class Planner:
    """Base class; `plan` returns one sketch per cycle."""

    name = 'planner'
    timed = True

    def reset(self):
        pass

    def plan(self, context: PlanningContext) -> Sketch:
        raise NotImplementedError


class IdmPlanner(Planner):
    name = 'idm'

    def __init__(self, params: IdmParams = IdmParams()):
        self.params = params

    def plan(self, context: PlanningContext) -> Sketch:
        av = context.av_state
        s_av, _ = context.route.project(av.x, av.y)
        front_station = s_av + context.geometry.front
        lead = lead_track_from_predictions(
            context.predictions, context.route, front_station, self.params.lane_half_width, context.dt)
        stations = idm_stations((s_av, av.v), lead, self.params, context.horizon_steps, context.dt)

        # tail beyond the horizon keeps a stopped rollout fittable
        tail = stations[-1] + self.params.tail_length * np.array([1.0, 2.0, 3.0]) / 3.0
        times = np.arange(len(stations) + len(tail)) * context.dt
        return Sketch.from_arrays(context.route.point_at(np.concatenate([stations, tail])), times)


class AStarPlanner(Planner):
    """Plans once per scenario on the static raster, then trims the path ahead of the AV."""

    name = 'astar'
    timed = False
    TRIM_LENGTH = 80.0

    def __init__(self, params: AStarParams = AStarParams()):
        self.params = params
        self._path: Optional[np.ndarray] = None

    def reset(self):
        self._path = None

    def plan(self, context: PlanningContext) -> Sketch:
        av = context.av_state
        if self._path is None:
            raster = rasterize_obstacles(context.map, context.static_hulls, self.params.inflation)
            self._path = astar_path(raster, (av.x, av.y, av.heading), context.goal, self.params).xy
            logger.info(f"A* path with {len(self._path)} cells")

        path = self._path
        nearest = int(np.argmin(np.linalg.norm(path - np.array([av.x, av.y]), axis=1)))
        ahead = path[nearest:]
        lengths = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(ahead, axis=0), axis=1))])
        ahead = ahead[lengths <= self.TRIM_LENGTH]
        if len(ahead) < 2:
            origin = np.array([av.x, av.y])
            nudge = origin + 0.1 * np.array([math.cos(av.heading), math.sin(av.heading)])
            return Sketch.from_arrays(np.vstack([origin, nudge]))
        return Sketch.from_arrays(ahead)


class SyntheticPlanner(Planner):
    def __init__(self, kind: SyntheticKind):
        self.kind = SyntheticKind.parse(kind) if not isinstance(kind, SyntheticKind) else kind
        self.name = f"synthetic:{self.kind.value}"

    def plan(self, context: PlanningContext) -> Sketch:
        return synthetic_sketch(self.kind, context.av_state, context.route, context.static_hulls,
                                context.horizon_steps, context.dt)


class FixturePlanner(Planner):
    """
    Replays recorded sketches.

    The fixture holds {"sketches": [{"t": cycle time, "waypoints": [[x, y, t?], ...]}]};
    each cycle uses the latest sketch recorded at or before the cycle time.
    """

    name = 'fixture'

    def __init__(self, path: Path):
        from sketchwrap.serialization import sketch_from_dict

        with open(path, 'r') as f:
            data = json.load(f)
        entries = data.get('sketches') if isinstance(data, dict) and 'sketches' in data else [{'t': 0.0, **data}]
        if not entries:
            raise SketchError(f"fixture {path} holds no sketches")
        self.entries = sorted(((float(e.get('t', 0.0)), sketch_from_dict(e)) for e in entries), key=lambda e: e[0])
        self.timed = all(sketch.has_timestamps for _, sketch in self.entries)

    def plan(self, context: PlanningContext) -> Sketch:
        chosen = self.entries[0][1]
        for t, sketch in self.entries:
            if t <= context.t + 1e-9:
                chosen = sketch
        return chosen


def make_planner(name: str, idm: IdmParams = IdmParams(), astar: AStarParams = AStarParams(),
                 fixture: Optional[Path] = None) -> Planner:
    """
    Planner from its CLI name: idm, astar, fixture or synthetic:<kind>.

    Raises:
        ValueError: Unknown name or fixture missing
    """
    if name == 'idm':
        return IdmPlanner(idm)
    if name == 'astar':
        return AStarPlanner(astar)
    if name == 'fixture':
        if fixture is None:
            raise ValueError("planner 'fixture' needs a fixture file")
        return FixturePlanner(fixture)
    if name.startswith('synthetic:'):
        return SyntheticPlanner(name.split(':', 1)[1])
    raise ValueError(f"Unknown planner '{name}' (expected idm, astar, fixture or synthetic:<kind>)")
