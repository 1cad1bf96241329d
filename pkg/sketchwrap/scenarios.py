"""
Scenarios
=========

A scenario is a road raster, the AV's initial state (with a ground-truth
track covering the warmup), a reference route and non-reactive agent tracks
replayed at the simulation rate.

The procedural generator builds families of 30 s straight-road scenarios:

    corridor    empty road
    cut_in      vehicle from the left lane merging in front of the AV and braking
    crossing    pedestrian crossing the road ahead
    narrow_gap  parked vehicles on both sides leaving a passable gap
    pudo        parked vehicles on the shoulder with a pedestrian stepping out
    blocked     stationary vehicle in the AV's lane
"""

import glob
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from sketchwrap.collision import rectangle
from sketchwrap.config_manager import GeneratorParams
from sketchwrap.geometry import Polyline
from sketchwrap.maneuver import MapRaster, VehicleState, is_convex_ccw

logger = logging.getLogger(__name__)

FAMILIES = ('corridor', 'cut_in', 'crossing', 'narrow_gap', 'pudo', 'blocked')
VEHICLE_SIZE = (4.5, 1.8)
PEDESTRIAN_SIZE = (0.6, 0.6)
ROAD_EDGES = (-2.5, 6.0)
MAP_Y_RANGE = (-10.0, 16.0)
ROUTE_START = -20.0
GOAL = (200.0, 0.0)


@dataclass(frozen=True)
class AgentTrack:
    """
    Replayed agent: poses (x, y, heading) at strictly increasing times and a
    convex footprint in the agent's body frame.
    """

    agent_id: str
    times: np.ndarray
    poses: np.ndarray
    footprint: np.ndarray
    kind: str = 'vehicle'

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        poses = np.asarray(self.poses, dtype=float)
        footprint = np.asarray(self.footprint, dtype=float)
        if times.ndim != 1 or len(times) < 1 or poses.shape != (len(times), 3):
            raise ValueError(f"agent {self.agent_id}: poses must be (T, 3) matching times")
        if np.any(np.diff(times) <= 0):
            raise ValueError(f"agent {self.agent_id}: timestamps must be strictly increasing")
        if not is_convex_ccw(footprint):
            raise ValueError(f"agent {self.agent_id}: footprint must be convex and counter-clockwise")
        for name, value in (('times', times), ('poses', poses), ('footprint', footprint)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def stationary(self) -> bool:
        return bool(np.all(np.abs(self.poses - self.poses[0]) < 1e-9))

    def pose_at(self, t: float) -> np.ndarray:
        """Linear interpolation, holding the first/last pose outside the track."""
        heading = np.unwrap(self.poses[:, 2])
        return np.array([
            np.interp(t, self.times, self.poses[:, 0]),
            np.interp(t, self.times, self.poses[:, 1]),
            np.interp(t, self.times, heading),
        ])

    def hull_at(self, t: float) -> np.ndarray:
        x, y, heading = self.pose_at(t)
        c, s = math.cos(heading), math.sin(heading)
        return self.footprint @ np.array([[c, -s], [s, c]]).T + np.array([x, y])


@dataclass(frozen=True)
class AvTrack:
    """Ground-truth AV states (x, y, heading, v, a, beta) used during warmup."""

    times: np.ndarray
    states: np.ndarray

    def state_at(self, t: float) -> VehicleState:
        i = int(np.searchsorted(self.times, t))
        if i < len(self.times) and abs(self.times[i] - t) < 1e-9:
            return VehicleState(*(float(v) for v in self.states[i]))
        values = [float(np.interp(t, self.times, self.states[:, k])) for k in range(6)]
        return VehicleState(*values)


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    map: MapRaster
    av_init: VehicleState
    route: Polyline
    goal: Tuple[float, float]
    agents: Tuple[AgentTrack, ...] = ()
    duration: float = 30.0
    sim_rate: float = 10.0
    warmup: float = 3.0
    av_track: Optional[AvTrack] = None
    family: str = 'custom'
    seed: Optional[int] = None

    def __post_init__(self):
        if self.duration < self.warmup:
            raise ValueError(f"scenario {self.scenario_id}: duration must be >= warmup")
        if self.sim_rate <= 0:
            raise ValueError(f"scenario {self.scenario_id}: sim_rate must be positive")
        for agent in self.agents:
            if agent.times[0] > 1e-9 or agent.times[-1] < self.duration - 1e-9:
                raise ValueError(f"scenario {self.scenario_id}: agent {agent.agent_id} does not cover [0, duration]")
        object.__setattr__(self, 'agents', tuple(self.agents))

    @property
    def dt(self) -> float:
        return 1.0 / self.sim_rate

    @property
    def cycle_times(self) -> np.ndarray:
        return np.arange(int(round(self.duration * self.sim_rate)) + 1) / self.sim_rate

    def av_ground_truth(self, t: float) -> VehicleState:
        if self.av_track is None:
            return self.av_init
        return self.av_track.state_at(t)

    def stationary_agents(self) -> List[AgentTrack]:
        return [a for a in self.agents if a.stationary]


# -- generator --------------------------------------------------------------

def build_road_map(params: GeneratorParams) -> MapRaster:
    """Straight two-lane road along +x with shoulders; drivable for y in ROAD_EDGES."""
    res = params.resolution
    width = int(round((params.road_length - ROUTE_START) / res))
    height = int(round((MAP_Y_RANGE[1] - MAP_Y_RANGE[0]) / res))
    centers_y = MAP_Y_RANGE[0] + (np.arange(height) + 0.5) * res
    rows = (centers_y >= ROAD_EDGES[0]) & (centers_y <= ROAD_EDGES[1])
    drivable = np.repeat(rows[:, None], width, axis=1)
    return MapRaster((ROUTE_START, MAP_Y_RANGE[0]), res, drivable)


def _footprint(kind: str) -> np.ndarray:
    length, width = VEHICLE_SIZE if kind == 'vehicle' else PEDESTRIAN_SIZE
    return rectangle((0.0, 0.0), 0.0, length, width)


def _track(agent_id: str, kind: str, times: np.ndarray, x, y, heading=None) -> AgentTrack:
    x = np.broadcast_to(np.asarray(x, dtype=float), times.shape)
    y = np.broadcast_to(np.asarray(y, dtype=float), times.shape)
    if heading is None:
        dx, dy = np.gradient(x, times), np.gradient(y, times)
        moving = np.hypot(dx, dy) > 1e-6
        heading = np.where(moving, np.arctan2(dy, dx), 0.0)
        # hold the last moving heading while stopped
        last = 0.0
        for i in range(len(heading)):
            if moving[i]:
                last = heading[i]
            else:
                heading[i] = last
    heading = np.broadcast_to(np.asarray(heading, dtype=float), times.shape)
    return AgentTrack(agent_id, times, np.column_stack([x, y, heading]), _footprint(kind), kind)


def _cut_in(rng, times, v_av, params) -> List[AgentTrack]:
    x0 = rng.uniform(10.0, 25.0)
    speed0 = rng.uniform(6.0, 10.0)
    t_cut = rng.uniform(params.warmup + 1.0, params.warmup + 4.0)
    t_merge = 3.0
    v_end = rng.uniform(0.0, 4.0)
    decel = rng.uniform(1.5, 3.0)

    braking = times > t_cut + t_merge
    speed = np.where(braking, np.maximum(speed0 - decel * (times - t_cut - t_merge), v_end), speed0)
    x = x0 + cumulative_trapezoid(speed, times, initial=0.0)
    tau = np.clip((times - t_cut) / t_merge, 0.0, 1.0)
    y = params.lane_width * 0.5 * (1.0 + np.cos(np.pi * tau))
    return [_track('cut_in_0', 'vehicle', times, x, y)]


def _crossing(rng, times, v_av, params) -> List[AgentTrack]:
    x_cross = rng.uniform(45.0, 75.0)
    walk = rng.uniform(1.0, 1.6)
    y_start, y_end = -5.0, 9.0
    t_arrive = x_cross / v_av + rng.uniform(-1.5, 0.5)
    t_start = max(t_arrive - (0.0 - y_start) / walk, 0.0)
    y = np.clip(y_start + walk * (times - t_start), y_start, y_end)
    y = np.where(times < t_start, y_start, y)
    return [_track('pedestrian_0', 'pedestrian', times, x_cross, y, heading=np.pi / 2)]


def _narrow_gap(rng, times, v_av, params) -> List[AgentTrack]:
    x_gap = rng.uniform(55.0, 75.0)
    return [
        _track('parked_left', 'vehicle', times, x_gap + rng.uniform(-2.0, 2.0), rng.uniform(3.8, 4.4), 0.0),
        _track('parked_right', 'vehicle', times, x_gap, rng.uniform(-2.0, -1.6), 0.0),
    ]


def _pudo(rng, times, v_av, params) -> List[AgentTrack]:
    agents = []
    x = rng.uniform(40.0, 60.0)
    for i in range(int(rng.integers(2, 5))):
        agents.append(_track(f'parked_{i}', 'vehicle', times, x, rng.uniform(-2.3, -1.9), 0.0))
        x += rng.uniform(8.0, 12.0)
    x_ped = agents[0].poses[0, 0] + 3.5
    walk = rng.uniform(0.8, 1.4)
    t_step = x_ped / v_av + rng.uniform(-3.0, -1.0)
    y = np.clip(-3.2 + walk * np.maximum(times - t_step, 0.0), -3.2, -0.5)
    agents.append(_track('pedestrian_0', 'pedestrian', times, x_ped, y, heading=np.pi / 2))
    return agents


def _blocked(rng, times, v_av, params) -> List[AgentTrack]:
    return [_track('blocker_0', 'vehicle', times, rng.uniform(70.0, 90.0), rng.uniform(-0.3, 0.3), 0.0)]


_GENERATORS = {
    'corridor': lambda rng, times, v_av, params: [],
    'cut_in': _cut_in,
    'crossing': _crossing,
    'narrow_gap': _narrow_gap,
    'pudo': _pudo,
    'blocked': _blocked,
}


def generate_scenario(family: str, index: int, seed: int = 0, params: GeneratorParams = GeneratorParams()) -> Scenario:
    """
    Build one scenario of a family; the result depends only on (family, index, seed, params).

    Raises:
        ValueError: Unknown family
    """
    if family not in _GENERATORS:
        raise ValueError(f"Unknown scenario family '{family}' (expected one of {list(FAMILIES)})")
    rng = np.random.default_rng([seed, FAMILIES.index(family), index])
    times = np.arange(int(round(params.duration * params.sim_rate)) + 1) / params.sim_rate

    v_av = float(rng.uniform(6.0, 10.0))
    av_init = VehicleState(0.0, 0.0, 0.0, v_av, 0.0, 0.0)
    warm_times = times[times <= params.warmup + 1e-9]
    av_states = np.zeros((len(warm_times), 6))
    av_states[:, 0] = v_av * warm_times
    av_states[:, 3] = v_av

    agents = _GENERATORS[family](rng, times, v_av, params)
    return Scenario(
        scenario_id=f"{family}-{seed}-{index:04d}",
        map=build_road_map(params),
        av_init=av_init,
        route=Polyline([[ROUTE_START, 0.0], [params.road_length, 0.0]]),
        goal=GOAL,
        agents=tuple(agents),
        duration=params.duration,
        sim_rate=params.sim_rate,
        warmup=params.warmup,
        av_track=AvTrack(warm_times, av_states),
        family=family,
        seed=seed,
    )


def generate_suite(family: str, count: int, seed: int = 0, params: GeneratorParams = GeneratorParams()) -> List[Scenario]:
    return [generate_scenario(family, i, seed, params) for i in range(count)]


def parse_generator_source(source: str) -> Optional[Tuple[str, int, int]]:
    """'gen:family:count:seed' -> (family, count, seed); None for file globs."""
    if not source.startswith('gen:'):
        return None
    parts = source.split(':')
    if len(parts) != 4:
        raise ValueError(f"Generator source must be gen:family:count:seed, got '{source}'")
    _, family, count, seed = parts
    if family not in FAMILIES:
        raise ValueError(f"Unknown scenario family '{family}'")
    return family, int(count), int(seed)


def resolve_scenarios(source: str, params: GeneratorParams = GeneratorParams()) -> List[Scenario]:
    """
    Scenarios from a generator spec or a glob of scenario JSON files.

    Raises:
        ValueError: Malformed source or no files matched
    """
    from sketchwrap.serialization import load_scenario

    generated = parse_generator_source(source)
    if generated is not None:
        family, count, seed = generated
        return generate_suite(family, count, seed, params)

    paths = sorted(glob.glob(source))
    if not paths:
        raise ValueError(f"No scenario files match '{source}'")
    return [load_scenario(Path(p)) for p in paths]
