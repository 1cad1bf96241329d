"""
Maneuver extraction
===================

Turns a sketch plus a scene (map raster, agent predictions) into a Maneuver:
baseline, tracking references, per-timestep lateral tubes and longitudinal
progress bounds. Each WrapperConfig mode enables one more constraint source:

    Baseline   -> baseline only (unconstrained tube and bounds)
    Tracking   -> + tracking references
    Map        -> + static raycast samples (lateral tube, map pinch)
    StayBehind -> + dynamic agents, always yielding
    StayAhead  -> + passing agents the AV is expected to lead
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from sketchwrap.config_manager import Mode, VehicleGeometry, WrapperConfig
from sketchwrap.errors import InfeasibleBounds
from sketchwrap.geometry import (
    Baseline,
    Sketch,
    basis_matrix,
    basis_rows,
    domain_of,
    evaluate_values,
    first_difference,
    fit_baseline,
    project_points,
)
from sketchwrap.logger import log_fallback
from sketchwrap.optim import QpProblem, SolveStatus, solve_qp

logger = logging.getLogger(__name__)

TUBE_CLEARANCE = 1e-3
TUBE_QP_TOL = 1e-6
PINCH_STEP = 0.25
EDGE_SAMPLE_SPACING = 1.0
PINCH_AGENT = 'map-pinch'


class MapRaster:
    """
    Occupancy grid of drivable voxels.

    `drivable[iy, ix]` covers the square whose lower-left corner is
    origin + resolution * (ix, iy). Queries outside the grid are non-drivable.
    """

    def __init__(self, origin: Tuple[float, float], resolution: float, drivable):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        grid = np.array(drivable, dtype=bool)
        if grid.ndim != 2:
            raise ValueError("drivable grid must be 2D")
        grid.setflags(write=False)
        self.origin = (float(origin[0]), float(origin[1]))
        self.resolution = float(resolution)
        self.drivable = grid

    @property
    def height(self) -> int:
        return self.drivable.shape[0]

    @property
    def width(self) -> int:
        return self.drivable.shape[1]

    def voxel_of(self, points) -> Tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(points, dtype=float)
        ix = np.floor((pts[..., 0] - self.origin[0]) / self.resolution).astype(int)
        iy = np.floor((pts[..., 1] - self.origin[1]) / self.resolution).astype(int)
        return ix, iy

    def is_drivable(self, points) -> np.ndarray:
        ix, iy = self.voxel_of(points)
        inside = (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)
        out = np.zeros(np.shape(ix), dtype=bool)
        out[inside] = self.drivable[iy[inside], ix[inside]]
        return out

    def cell_center(self, ix, iy) -> np.ndarray:
        return np.stack([
            self.origin[0] + (np.asarray(ix) + 0.5) * self.resolution,
            self.origin[1] + (np.asarray(iy) + 0.5) * self.resolution,
        ], axis=-1)

    def with_drivable(self, drivable) -> 'MapRaster':
        return MapRaster(self.origin, self.resolution, drivable)

    def __eq__(self, other):
        return (isinstance(other, MapRaster) and self.origin == other.origin
                and self.resolution == other.resolution and np.array_equal(self.drivable, other.drivable))


def _polygon_area(polygon: np.ndarray) -> float:
    x, y = polygon[:, 0], polygon[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def is_convex_ccw(polygon: np.ndarray, tol: float = 1e-6) -> bool:
    edges = np.roll(polygon, -1, axis=0) - polygon
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    return len(polygon) >= 3 and bool(np.all(cross >= -tol)) and _polygon_area(polygon) > 0


@dataclass(frozen=True)
class AgentPrediction:
    """One hull per horizon timestep, each convex and counter-clockwise."""

    agent_id: str
    hulls: Tuple[np.ndarray, ...]

    def __post_init__(self):
        hulls = []
        for hull in self.hulls:
            hull = np.asarray(hull, dtype=float)
            if hull.ndim != 2 or hull.shape[1] != 2 or len(hull) < 3:
                raise ValueError(f"agent {self.agent_id}: hull must have >= 3 (x, y) vertices")
            if not is_convex_ccw(hull):
                raise ValueError(f"agent {self.agent_id}: hull must be convex and counter-clockwise")
            hulls.append(hull)
        object.__setattr__(self, 'hulls', tuple(hulls))

    @property
    def static(self) -> bool:
        return all(np.allclose(h, self.hulls[0]) for h in self.hulls)


@dataclass(frozen=True)
class Scene:
    map: Optional[MapRaster] = None
    predictions: Tuple[AgentPrediction, ...] = ()


@dataclass(frozen=True)
class VehicleState:
    """Cartesian AV state; (x, y) is the rear-axle reference point."""

    x: float
    y: float
    heading: float
    v: float = 0.0
    a: float = 0.0
    beta: float = 0.0

    def bumper_midpoints(self, geometry: VehicleGeometry) -> Tuple[np.ndarray, np.ndarray]:
        direction = np.array([math.cos(self.heading), math.sin(self.heading)])
        origin = np.array([self.x, self.y])
        return origin - geometry.rear * direction, origin + geometry.front * direction

    def corners(self, geometry: VehicleGeometry) -> np.ndarray:
        """Footprint rectangle, counter-clockwise starting at rear-right."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        half = 0.5 * geometry.width
        local = np.array([
            [-geometry.rear, -half],
            [geometry.front, -half],
            [geometry.front, half],
            [-geometry.rear, half],
        ])
        rotation = np.array([[c, -s], [s, c]])
        return local @ rotation.T + np.array([self.x, self.y])


@dataclass(frozen=True)
class ConstraintSample:
    """Obstacle sample in spline-space; t_index is None for static samples."""

    p: float
    n: float
    t_index: Optional[int] = None
    agent_id: Optional[str] = None

    @property
    def is_static(self) -> bool:
        return self.agent_id is None or self.agent_id == PINCH_AGENT


@dataclass(frozen=True)
class TrackingReferences:
    present: bool
    p_ref: Optional[np.ndarray] = None
    v_ref: Optional[np.ndarray] = None
    a_ref: Optional[np.ndarray] = None

    @classmethod
    def absent(cls) -> 'TrackingReferences':
        return cls(present=False)

    def __post_init__(self):
        if self.present:
            if self.p_ref is None or self.v_ref is None or self.a_ref is None:
                raise ValueError("present tracking references need p_ref, v_ref and a_ref")
            if np.any(np.diff(self.p_ref) < 0):
                raise ValueError("p_ref must be non-decreasing")


@dataclass(frozen=True)
class LateralTube:
    """
    Per-timestep hard/soft lateral offset splines, arrays of shape (T, N).

    Control value i sits at progress i, the same cardinal layout as the
    baseline, so knots are 1.0 progress unit apart.
    """

    left_hard: np.ndarray
    left_soft: np.ndarray
    right_hard: np.ndarray
    right_soft: np.ndarray

    def __post_init__(self):
        arrays = [np.array(getattr(self, name), dtype=float) for name in ('left_hard', 'left_soft', 'right_hard', 'right_soft')]
        shape = arrays[0].shape
        if any(a.shape != shape for a in arrays) or len(shape) != 2:
            raise ValueError("tube arrays must share a (T, N) shape")
        lh, ls, rh, rs = arrays
        if np.any(rh > rs + 1e-12) or np.any(rs > ls + 1e-12) or np.any(ls > lh + 1e-12):
            raise ValueError("tube knots violate right_hard <= right_soft <= left_soft <= left_hard")
        for name, a in zip(('left_hard', 'left_soft', 'right_hard', 'right_soft'), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def unconstrained(cls, steps: int, n_control: int, max_ray: float) -> 'LateralTube':
        full = np.full((steps, n_control), max_ray)
        return cls(full, full, -full, -full)

    @property
    def steps(self) -> int:
        return self.left_hard.shape[0]

    def evaluate(self, name: str, t: int, p, derivative: int = 0) -> np.ndarray:
        """Spline `name` at timestep t; p is clamped to the knot range."""
        return evaluate_values(getattr(self, name)[t], p, derivative)

    def evaluate_rows(self, name: str, ts: np.ndarray, p: np.ndarray, derivative: int = 0) -> np.ndarray:
        """Row-wise evaluation: spline `name` of timestep ts[i] at p[i]."""
        table = getattr(self, name)
        lo, hi = domain_of(table.shape[1])
        p = np.asarray(p, dtype=float)
        outside = (p < lo) | (p > hi)
        weights, idx = basis_rows(np.clip(p, lo, hi), table.shape[1], derivative)
        out = np.sum(weights * table[np.asarray(ts)[:, None], idx], axis=-1)
        return np.where(outside, 0.0, out) if derivative else out

    def width(self, t: int, p) -> np.ndarray:
        return self.evaluate('left_hard', t, p) - self.evaluate('right_hard', t, p)


@dataclass(frozen=True)
class LongitudinalBounds:
    p_lower: np.ndarray
    p_upper: np.ndarray
    notes: Tuple[str, ...] = ()

    def __post_init__(self):
        lower = np.array(self.p_lower, dtype=float)
        upper = np.array(self.p_upper, dtype=float)
        if lower.shape != upper.shape:
            raise ValueError("bound arrays must match")
        crossing = np.nonzero(lower > upper + 1e-12)[0]
        if crossing.size:
            raise InfeasibleBounds(f"p_lower > p_upper at timestep {int(crossing[0])}")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, 'p_lower', lower)
        object.__setattr__(self, 'p_upper', upper)

    @classmethod
    def unconstrained(cls, steps: int, baseline: Baseline) -> 'LongitudinalBounds':
        lo, hi = baseline.domain
        return cls(np.full(steps, lo), np.full(steps, hi))


@dataclass(frozen=True)
class Maneuver:
    baseline: Baseline
    tracking: TrackingReferences
    tube: LateralTube
    bounds: LongitudinalBounds
    horizon_steps: int
    dt: float
    mode: Mode = Mode.BASELINE
    notes: Tuple[str, ...] = field(default=())
    # samples the hard tube was fitted against; static ones carry t_index None
    lateral_samples: Tuple[ConstraintSample, ...] = field(default=())

    def __post_init__(self):
        steps = self.horizon_steps + 1
        if self.tube.steps != steps or len(self.bounds.p_upper) != steps:
            raise ValueError("tube and bounds must cover horizon_steps + 1 timesteps")
        if self.tracking.present and len(self.tracking.p_ref) != steps:
            raise ValueError("tracking references must cover horizon_steps + 1 timesteps")
        lo, hi = self.baseline.domain
        if np.any(self.bounds.p_lower < lo - 1e-9) or np.any(self.bounds.p_upper > hi + 1e-9):
            raise ValueError("bounds must lie inside the baseline domain")


# -- tracking ---------------------------------------------------------------

def compute_tracking_references(
    sketch: Sketch,
    baseline: Baseline,
    dt: float,
    horizon_steps: int,
    num_samples: int = 64,
) -> TrackingReferences:
    """
    Progress, speed and acceleration references on the horizon grid.

    Timestamps are relative to the planning instant. Waypoint progress is
    resampled linearly onto t_k = k * dt; speed and acceleration are central
    differences of station (second-order one-sided at the ends).
    """
    if not sketch.has_timestamps:
        return TrackingReferences.absent()

    p_waypoints, _, _, _ = project_points(baseline, sketch.xy, num_samples)
    p_waypoints = np.maximum.accumulate(p_waypoints)
    grid = np.arange(horizon_steps + 1) * dt
    p_ref = np.interp(grid, sketch.times, p_waypoints)
    stations = baseline.station_of(p_ref)
    v_ref = np.gradient(stations, dt, edge_order=2)
    a_ref = np.gradient(v_ref, dt, edge_order=2)
    return TrackingReferences(True, p_ref, v_ref, a_ref)


# -- obstacle samples -------------------------------------------------------

def _outward_samples(hull: np.ndarray, buffer: float) -> np.ndarray:
    """Hull vertices and edge subdivision points pushed outward by `buffer`."""
    edges = np.roll(hull, -1, axis=0) - hull
    lengths = np.linalg.norm(edges, axis=1)
    normals = np.column_stack([edges[:, 1], -edges[:, 0]]) / np.maximum(lengths, 1e-12)[:, None]
    bisectors = normals + np.roll(normals, 1, axis=0)
    bisectors /= np.maximum(np.linalg.norm(bisectors, axis=1), 1e-12)[:, None]

    points = [hull + buffer * bisectors]
    for i in range(len(hull)):
        parts = 2
        while lengths[i] / parts > EDGE_SAMPLE_SPACING:
            parts *= 2
        fractions = np.arange(1, parts) / parts
        points.append(hull[i] + fractions[:, None] * edges[i] + buffer * normals[i])
    return np.vstack(points)


def project_dynamic(
    predictions: Sequence[AgentPrediction],
    baseline: Baseline,
    lateral_buffer: float = 0.5,
    num_samples: int = 64,
) -> List[List[ConstraintSample]]:
    """
    Buffered hull samples of every agent in spline-space, per timestep.

    Samples whose foot point falls beyond either end of the baseline are dropped.
    """
    steps = max((len(pred.hulls) for pred in predictions), default=0)
    per_step: List[List[ConstraintSample]] = [[] for _ in range(steps)]
    batches, owners = [], []
    for pred in predictions:
        for t, hull in enumerate(pred.hulls):
            pts = _outward_samples(hull, lateral_buffer)
            batches.append(pts)
            owners.extend([(t, pred.agent_id)] * len(pts))
    if not batches:
        return per_step

    p, n, _, clamped = project_points(baseline, np.vstack(batches), num_samples)
    for (t, agent_id), pk, nk, out in zip(owners, p, n, clamped):
        if not out:
            per_step[t].append(ConstraintSample(float(pk), float(nk), t, agent_id))
    return per_step


def raycast_static(
    map_raster: MapRaster,
    baseline: Baseline,
    spacing: float = 1.0,
    max_ray: float = 10.0,
) -> List[ConstraintSample]:
    """
    March perpendicular rays left and right of the baseline every `spacing` m.

    The first non-drivable voxel along a ray yields a sample at its distance;
    rays that hit nothing yield samples at +/-max_ray.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    stations = np.arange(0.0, baseline.length + 1e-9, spacing)
    p = baseline.progress_of(stations)
    origins = baseline.eval(p)
    normals = baseline.eval_normal(p)

    step = 0.5 * map_raster.resolution
    distances = np.arange(0.0, max_ray + 1e-9, step)
    samples: List[ConstraintSample] = []
    for side in (1.0, -1.0):
        rays = origins[:, None, :] + side * distances[None, :, None] * normals[:, None, :]
        blocked = ~map_raster.is_drivable(rays)
        hit = blocked.any(axis=1)
        first = np.argmax(blocked, axis=1)
        offsets = np.where(hit, distances[first], max_ray)
        samples.extend(ConstraintSample(float(pk), float(side * d)) for pk, d in zip(p, offsets))
    return samples


def classify_constraints(
    samples: Sequence[ConstraintSample],
    config: WrapperConfig,
) -> Tuple[List[ConstraintSample], List[ConstraintSample]]:
    """
    Split samples into (lateral, longitudinal-triggering).

    Dynamic agents whose closest sample is farther than lateral_relevance
    are lateral only; otherwise, and for static samples, a sample closer
    than longitudinal_trigger to the baseline triggers longitudinally.
    """
    closest: Dict[str, float] = {}
    for s in samples:
        if not s.is_static:
            closest[s.agent_id] = min(closest.get(s.agent_id, np.inf), abs(s.n))

    lateral, triggering = [], []
    for s in samples:
        if not s.is_static and closest[s.agent_id] > config.lateral_relevance:
            lateral.append(s)
        elif abs(s.n) < config.longitudinal_trigger:
            triggering.append(s)
        else:
            lateral.append(s)
    return lateral, triggering


def _free_area(lateral: Sequence[ConstraintSample], bounds: Dict[int, float], start: float,
               steps: int, max_ray: float, end: float) -> float:
    grid = np.arange(start, end + 1e-9, 0.5)
    area = 0.0
    for t in range(steps):
        stop = bounds.get(t, end)
        cells = grid[grid < stop]
        if cells.size == 0:
            continue
        left = np.full(cells.shape, max_ray)
        right = np.full(cells.shape, -max_ray)
        for s in lateral:
            if s.t_index != t:
                continue
            near = np.abs(cells - s.p) <= 0.5
            if s.n > 0:
                left[near] = np.minimum(left[near], s.n)
            else:
                right[near] = np.maximum(right[near], s.n)
        area += float(np.sum(np.maximum(left - right, 0.0))) * 0.5
    return area


def apply_space_heuristic(
    lateral: List[ConstraintSample],
    triggering: List[ConstraintSample],
    p_front: float,
    steps: int,
    end: float,
    config: WrapperConfig,
) -> Tuple[List[ConstraintSample], List[ConstraintSample]]:
    """
    Per partially-triggering agent, keep the split classification or make the
    whole agent longitudinal, whichever leaves more free area ahead of the AV.
    """
    agents = sorted({s.agent_id for s in triggering if not s.is_static})
    for agent in agents:
        own_lat = [s for s in lateral if s.agent_id == agent]
        if not own_lat:
            continue
        own_trig = [s for s in triggering if s.agent_id == agent]

        split_bounds: Dict[int, float] = {}
        for s in own_trig:
            split_bounds[s.t_index] = min(split_bounds.get(s.t_index, end), s.p)
        block_bounds = dict(split_bounds)
        for s in own_lat:
            block_bounds[s.t_index] = min(block_bounds.get(s.t_index, end), s.p)

        split_area = _free_area(own_lat, split_bounds, p_front, steps, config.max_ray, end)
        block_area = _free_area([], block_bounds, p_front, steps, config.max_ray, end)
        if block_area > split_area:
            logger.debug(f"Agent {agent}: all-longitudinal leaves more space ({block_area:.1f} > {split_area:.1f})")
            lateral = [s for s in lateral if s.agent_id != agent]
            triggering = triggering + own_lat
    return lateral, triggering


# -- longitudinal bounds ----------------------------------------------------

def compute_longitudinal_bounds(
    triggering: Sequence[ConstraintSample],
    av_progress: Tuple[float, float],
    mode: Mode,
    tracking: TrackingReferences,
    baseline: Baseline,
    config: WrapperConfig,
    horizon_steps: int,
    geometry: VehicleGeometry = VehicleGeometry(),
) -> LongitudinalBounds:
    """
    Per-timestep progress bounds from longitudinal-triggering samples.

    Stay-behind: p_upper(t) is the smallest triggering progress ahead of the
    AV's rear bumper, pulled back by long_buffer (in station) and floored at
    p_front(0) + eps_min. Stay-ahead additionally lets an agent whose samples
    all lie behind the expected rear bumper raise p_lower(t) instead; if that
    crosses p_upper(t) the agent reverts to stay-behind for that timestep.
    Static samples always follow the stay-behind rule.

    Args:
        triggering: Longitudinal-triggering samples (static, map-pinch or dynamic)
        av_progress: (p_rear(0), p_front(0)) from the bumper midpoints
        mode: Effective wrapper mode
        tracking: Tracking references (expected AV progress for stay-ahead)
        baseline: Maneuver baseline
        config: Buffers and margins
        horizon_steps: Horizon length
        geometry: AV footprint

    Returns:
        LongitudinalBounds (with notes for reverted agents)
    """
    steps = horizon_steps + 1
    lo, hi = baseline.domain
    if mode == Mode.BASELINE or mode == Mode.TRACKING or not triggering:
        return LongitudinalBounds.unconstrained(steps, baseline)

    p_rear, p_front = av_progress
    floor = baseline.progress_clamped(baseline.station_of(min(max(p_front, lo), hi)) + config.eps_min)

    def pulled_back(p: float) -> float:
        return max(baseline.progress_clamped(baseline.station_of(p) - config.long_buffer), floor)

    def pushed_ahead(p: float) -> float:
        return baseline.progress_clamped(baseline.station_of(p) + config.long_buffer)

    stay_ahead = mode == Mode.STAY_AHEAD and tracking.present
    expected_rear = None
    if stay_ahead:
        expected_rear = baseline.progress_clamped(baseline.station_of(tracking.p_ref) - geometry.rear)

    static_upper = hi
    for s in triggering:
        if s.is_static and s.t_index is None and s.p > p_rear:
            static_upper = min(static_upper, pulled_back(s.p))

    lower = np.full(steps, lo)
    upper = np.full(steps, static_upper)
    for s in triggering:
        # per-timestep map pinches
        if s.is_static and s.t_index is not None and s.t_index < steps and s.p > p_rear:
            upper[s.t_index] = min(upper[s.t_index], pulled_back(s.p))
    notes: List[str] = []
    if mode == Mode.MAP:
        return LongitudinalBounds(lower, upper)

    by_step: Dict[int, Dict[str, List[float]]] = {}
    for s in triggering:
        if not s.is_static and s.t_index is not None and s.t_index < steps:
            by_step.setdefault(s.t_index, {}).setdefault(s.agent_id, []).append(s.p)

    for t in range(steps):
        agents = by_step.get(t, {})
        behind_upper = upper[t]
        ahead_candidates: Dict[str, float] = {}
        for agent_id in sorted(agents):
            ps = agents[agent_id]
            if stay_ahead and max(ps) < expected_rear[t]:
                ahead_candidates[agent_id] = pushed_ahead(max(ps))
                continue
            ahead = [p for p in ps if p > p_rear]
            if ahead:
                behind_upper = min(behind_upper, pulled_back(min(ahead)))

        while True:
            crossing = sorted(a for a, cand in ahead_candidates.items() if cand > behind_upper)
            if not crossing:
                break
            for agent_id in crossing:
                del ahead_candidates[agent_id]
                message = f"t={t}: agent {agent_id} reverted to stay-behind (bounds crossed)"
                logger.warning(f"⚠️  InfeasibleBounds {message}")
                notes.append(message)
                ahead = [p for p in agents[agent_id] if p > p_rear]
                if ahead:
                    behind_upper = min(behind_upper, pulled_back(min(ahead)))

        upper[t] = behind_upper
        if ahead_candidates:
            lower[t] = max(lo, max(ahead_candidates.values()))

    return LongitudinalBounds(lower, upper, tuple(notes))


# -- lateral tube -----------------------------------------------------------

def _fit_side(samples: Sequence[ConstraintSample], n_control: int, side: float, config: WrapperConfig) -> np.ndarray:
    """
    Control values of one hard tube side.

    The left side maximizes sum(v) - c_tube |D v|^2 with basis(p_i) v <= n_i - clearance;
    the right side is solved mirrored (v -> -v, n -> -n).
    """
    if not samples:
        return np.full(n_control, side * config.max_ray)

    p = np.array([s.p for s in samples])
    n = side * np.array([s.n for s in samples])
    rows = basis_matrix(p, n_control)
    diff = first_difference(n_control)
    problem = QpProblem(
        H=2.0 * config.c_tube * diff.T @ diff,
        g=-np.ones(n_control),
        A=np.vstack([rows, np.eye(n_control)]),
        lower=np.concatenate([np.full(len(p), -np.inf), np.zeros(n_control)]),
        # samples on the baseline itself collapse the side to zero width
        upper=np.concatenate([np.maximum(n - TUBE_CLEARANCE - 10 * TUBE_QP_TOL, 0.0), np.full(n_control, config.max_ray)]),
    )
    values, report = solve_qp(problem, tol=TUBE_QP_TOL)
    if report.status == SolveStatus.INFEASIBLE:
        log_fallback('fit_lateral_tube', f"tube QP infeasible with {len(p)} samples; side collapsed to the baseline")
        return np.zeros(n_control)
    if report.status != SolveStatus.CONVERGED:
        logger.debug(f"Tube QP stopped with {report.status.value} (primal {report.primal_residual:.2e})")
    return side * np.clip(values, 0.0, config.max_ray)


def _soften(left_hard: np.ndarray, right_hard: np.ndarray, margin: float) -> Tuple[np.ndarray, np.ndarray]:
    middle = 0.5 * (left_hard + right_hard)
    return np.maximum(left_hard - margin, middle), np.minimum(right_hard + margin, middle)


def fit_lateral_tube(
    lateral_per_step: Sequence[Sequence[ConstraintSample]],
    static_samples: Sequence[ConstraintSample],
    baseline: Baseline,
    horizon_steps: int,
    config: WrapperConfig = WrapperConfig(),
) -> LateralTube:
    """
    One QP per timestep and side over the tube control values.

    Timesteps without dynamic samples share the static-only fit.

    Args:
        lateral_per_step: Dynamic lateral samples per timestep (may be shorter than the horizon)
        static_samples: Static lateral samples, applied at every timestep
        baseline: Maneuver baseline (defines the knot count)
        horizon_steps: Horizon length
        config: max_ray, c_tube, soft_margin

    Returns:
        LateralTube with (horizon_steps + 1, N) arrays
    """
    steps = horizon_steps + 1
    n_control = baseline.n_control
    cache: Dict[Tuple, np.ndarray] = {}

    def side_values(samples: List[ConstraintSample], side: float) -> np.ndarray:
        key = (side, tuple((s.p, s.n) for s in samples))
        if key not in cache:
            cache[key] = _fit_side(samples, n_control, side, config)
        return cache[key]

    left_hard = np.zeros((steps, n_control))
    right_hard = np.zeros((steps, n_control))
    for t in range(steps):
        dynamic = list(lateral_per_step[t]) if t < len(lateral_per_step) else []
        merged = list(static_samples) + dynamic
        left_hard[t] = side_values([s for s in merged if s.n > 0], 1.0)
        right_hard[t] = side_values([s for s in merged if s.n <= 0], -1.0)

    left_soft, right_soft = _soften(left_hard, right_hard, config.soft_margin)
    return LateralTube(left_hard, left_soft, right_hard, right_soft)


def pinch_samples(tube: LateralTube, baseline: Baseline, p_front: float, pinch_width: float) -> List[ConstraintSample]:
    """First progress ahead of the AV where each timestep's hard tube is narrower than pinch_width."""
    lo, hi = baseline.domain
    grid = np.arange(max(p_front, lo), hi + 1e-9, PINCH_STEP)
    samples = []
    for t in range(tube.steps):
        narrow = np.nonzero(tube.width(t, grid) < pinch_width)[0]
        if narrow.size:
            samples.append(ConstraintSample(float(grid[narrow[0]]), 0.0, t, PINCH_AGENT))
    return samples


def _pinch_per_step(samples: List[ConstraintSample], static_only: bool) -> List[ConstraintSample]:
    if not static_only or not samples:
        return samples
    # A static tube pinches at every timestep; keep one sample for all of them
    first = min(samples, key=lambda s: s.p)
    return [ConstraintSample(first.p, 0.0, None, PINCH_AGENT)]


# -- composition ------------------------------------------------------------

def av_progress(baseline: Baseline, av_state: VehicleState, geometry: VehicleGeometry, num_samples: int = 64) -> Tuple[float, float]:
    rear, front = av_state.bumper_midpoints(geometry)
    p, _, _, _ = project_points(baseline, np.vstack([rear, front]), num_samples)
    return float(p[0]), float(p[1])


def extract_maneuver(
    sketch: Sketch,
    scene: Scene,
    av_state: VehicleState,
    config: WrapperConfig = WrapperConfig(),
    geometry: VehicleGeometry = VehicleGeometry(),
) -> Maneuver:
    """
    Build the maneuver for one planning cycle.

    Args:
        sketch: Planner output (timestamps relative to now)
        scene: Map raster and agent predictions on the horizon grid
        av_state: Current AV state
        config: Wrapper configuration (mode, thresholds, buffers)
        geometry: AV footprint

    Returns:
        Maneuver

    Raises:
        FitError: The sketch cannot support a baseline
    """
    mode = config.mode
    notes: List[str] = []
    steps = config.horizon_steps + 1

    baseline = fit_baseline(sketch, config.dist_max, config.c_reg)

    tracking = TrackingReferences.absent()
    if mode.at_least(Mode.TRACKING):
        tracking = compute_tracking_references(sketch, baseline, config.dt, config.horizon_steps, config.projection_samples)
    if mode == Mode.STAY_AHEAD and not tracking.present:
        note = "StayAhead needs a timed sketch; fell back to StayBehind"
        log_fallback('extract_maneuver', note)
        notes.append(note)
        mode = Mode.STAY_BEHIND

    if mode == Mode.BASELINE:
        return Maneuver(
            baseline=baseline,
            tracking=TrackingReferences.absent(),
            tube=LateralTube.unconstrained(steps, baseline.n_control, config.max_ray),
            bounds=LongitudinalBounds.unconstrained(steps, baseline),
            horizon_steps=config.horizon_steps,
            dt=config.dt,
            mode=mode,
            notes=tuple(notes),
        )

    p_rear, p_front = av_progress(baseline, av_state, geometry, config.projection_samples)

    static_lateral: List[ConstraintSample] = []
    static_triggering: List[ConstraintSample] = []
    if mode.at_least(Mode.MAP) and scene.map is not None:
        static = raycast_static(scene.map, baseline, config.ray_spacing, config.max_ray)
        static_lateral, static_triggering = classify_constraints(static, config)

    dynamic_lateral: List[List[ConstraintSample]] = [[] for _ in range(steps)]
    dynamic_triggering: List[ConstraintSample] = []
    if mode.at_least(Mode.STAY_BEHIND) and scene.predictions:
        per_step = project_dynamic(scene.predictions, baseline, config.lateral_buffer, config.projection_samples)
        flat = [s for step_samples in per_step[:steps] for s in step_samples]
        lateral, dynamic_triggering = classify_constraints(flat, config)
        if config.space_heuristic:
            lateral, dynamic_triggering = apply_space_heuristic(
                lateral, dynamic_triggering, p_front, steps, baseline.domain[1], config)
        for s in lateral:
            dynamic_lateral[s.t_index].append(s)

    if mode.at_least(Mode.MAP):
        tube = fit_lateral_tube(dynamic_lateral, static_lateral, baseline, config.horizon_steps, config)
        pinches = _pinch_per_step(
            pinch_samples(tube, baseline, p_front, config.pinch_width),
            static_only=not any(dynamic_lateral),
        )
    else:
        tube = LateralTube.unconstrained(steps, baseline.n_control, config.max_ray)
        pinches = []

    bounds = compute_longitudinal_bounds(
        static_triggering + pinches + dynamic_triggering,
        (p_rear, p_front),
        mode,
        tracking,
        baseline,
        config,
        config.horizon_steps,
        geometry,
    )
    notes.extend(bounds.notes)

    if tracking.present and not config.use_tracking:
        notes.append("tracking references withheld from the MPC (use_tracking off)")
        tracking = TrackingReferences.absent()

    return Maneuver(
        baseline=baseline,
        tracking=tracking,
        tube=tube,
        bounds=bounds,
        horizon_steps=config.horizon_steps,
        dt=config.dt,
        mode=mode,
        notes=tuple(notes),
        lateral_samples=tuple(static_lateral) + tuple(s for step_samples in dynamic_lateral for s in step_samples),
    )
