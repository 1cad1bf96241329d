"""
Unit tests for scenarios and the procedural generator
"""
import unittest
import sys
import tempfile
from pathlib import Path

import numpy as np

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from sketchwrap.collision import rectangle
from sketchwrap.config_manager import GeneratorParams
from sketchwrap.geometry import Polyline
from sketchwrap.maneuver import VehicleState
from sketchwrap.scenarios import (
    FAMILIES,
    AgentTrack,
    AvTrack,
    Scenario,
    build_road_map,
    generate_scenario,
    generate_suite,
    parse_generator_source,
    resolve_scenarios,
)
from sketchwrap.serialization import save_scenario


def parked(agent_id='parked', x=20.0, y=0.0, duration=10.0):
    times = np.array([0.0, duration])
    return AgentTrack(agent_id, times, np.array([[x, y, 0.0], [x, y, 0.0]]), rectangle((0.0, 0.0), 0.0, 4.5, 1.8))


class TestAgentTrack(unittest.TestCase):

    def test_pose_interpolation_and_hold(self):
        track = AgentTrack('a', np.array([0.0, 10.0]), np.array([[0.0, 0.0, 0.0], [10.0, 5.0, 0.0]]),
                           rectangle((0.0, 0.0), 0.0, 1.0, 1.0))
        np.testing.assert_allclose(track.pose_at(5.0), [5.0, 2.5, 0.0])
        np.testing.assert_allclose(track.pose_at(20.0), [10.0, 5.0, 0.0])
        np.testing.assert_allclose(track.hull_at(0.0), rectangle((0.0, 0.0), 0.0, 1.0, 1.0))
        self.assertFalse(track.stationary)

    def test_stationary(self):
        self.assertTrue(parked().stationary)

    def test_non_increasing_times_rejected(self):
        with self.assertRaises(ValueError):
            AgentTrack('a', np.array([0.0, 0.0]), np.zeros((2, 3)), rectangle((0.0, 0.0), 0.0, 1.0, 1.0))

    def test_clockwise_footprint_rejected(self):
        with self.assertRaises(ValueError):
            AgentTrack('a', np.array([0.0]), np.zeros((1, 3)), rectangle((0.0, 0.0), 0.0, 1.0, 1.0)[::-1])


class TestScenario(unittest.TestCase):

    def setUp(self):
        self.params = GeneratorParams()
        self.road = build_road_map(self.params)
        self.route = Polyline([[-20.0, 0.0], [200.0, 0.0]])

    def test_road_map(self):
        self.assertTrue(self.road.is_drivable(np.array([50.0, 0.0])))
        self.assertTrue(self.road.is_drivable(np.array([50.0, 5.5])))
        self.assertFalse(self.road.is_drivable(np.array([50.0, -5.0])))
        self.assertFalse(self.road.is_drivable(np.array([50.0, 8.0])))

    def test_agents_must_cover_duration(self):
        with self.assertRaises(ValueError):
            Scenario('s', self.road, VehicleState(0.0, 0.0, 0.0), self.route, (200.0, 0.0),
                     agents=(parked(duration=5.0),), duration=10.0)

    def test_duration_not_shorter_than_warmup(self):
        with self.assertRaises(ValueError):
            Scenario('s', self.road, VehicleState(0.0, 0.0, 0.0), self.route, (200.0, 0.0), duration=2.0, warmup=3.0)

    def test_cycle_times(self):
        scenario = Scenario('s', self.road, VehicleState(0.0, 0.0, 0.0), self.route, (200.0, 0.0), duration=5.0)
        times = scenario.cycle_times
        self.assertEqual(len(times), 51)
        self.assertAlmostEqual(times[-1], 5.0)
        self.assertAlmostEqual(scenario.dt, 0.1)

    def test_ground_truth_without_track(self):
        state = VehicleState(1.0, 2.0, 0.0, v=3.0)
        scenario = Scenario('s', self.road, state, self.route, (200.0, 0.0))
        self.assertEqual(scenario.av_ground_truth(2.0), state)

    def test_av_track_interpolates(self):
        track = AvTrack(np.array([0.0, 1.0]), np.array([[0.0, 0.0, 0.0, 5.0, 0.0, 0.0], [5.0, 0.0, 0.0, 5.0, 0.0, 0.0]]))
        self.assertAlmostEqual(track.state_at(0.5).x, 2.5)
        self.assertEqual(track.state_at(1.0).x, 5.0)


class TestGenerator(unittest.TestCase):

    def test_deterministic(self):
        for family in FAMILIES:
            first = generate_scenario(family, 2, seed=7)
            second = generate_scenario(family, 2, seed=7)
            self.assertEqual(first.scenario_id, f"{family}-7-0002")
            self.assertEqual(first.av_init, second.av_init)
            for a, b in zip(first.agents, second.agents):
                np.testing.assert_array_equal(a.poses, b.poses)

    def test_index_changes_scenario(self):
        self.assertNotEqual(generate_scenario('blocked', 0).av_init, generate_scenario('blocked', 1).av_init)

    def test_unknown_family(self):
        with self.assertRaises(ValueError):
            generate_scenario('roundabout', 0)

    def test_agents_cover_duration(self):
        for family in FAMILIES:
            scenario = generate_scenario(family, 0)
            for agent in scenario.agents:
                self.assertAlmostEqual(agent.times[0], 0.0)
                self.assertAlmostEqual(agent.times[-1], scenario.duration)

    def test_corridor_is_empty(self):
        scenario = generate_scenario('corridor', 0)
        self.assertEqual(scenario.agents, ())
        warm = scenario.av_ground_truth(scenario.warmup)
        self.assertAlmostEqual(warm.x, scenario.av_init.v * scenario.warmup)

    def test_cut_in_merges_into_av_lane(self):
        agent = generate_scenario('cut_in', 0).agents[0]
        self.assertAlmostEqual(agent.poses[0, 1], GeneratorParams().lane_width)
        self.assertAlmostEqual(agent.poses[-1, 1], 0.0, delta=1e-9)

    def test_narrow_gap_is_stationary(self):
        scenario = generate_scenario('narrow_gap', 0)
        self.assertEqual(len(scenario.stationary_agents()), 2)

    def test_shorter_duration(self):
        scenario = generate_scenario('crossing', 0, params=GeneratorParams(duration=8.0))
        self.assertEqual(scenario.duration, 8.0)
        self.assertAlmostEqual(scenario.agents[0].times[-1], 8.0)

    def test_suite(self):
        suite = generate_suite('pudo', 3, seed=1)
        self.assertEqual([s.scenario_id for s in suite], ['pudo-1-0000', 'pudo-1-0001', 'pudo-1-0002'])


class TestSources(unittest.TestCase):

    def test_parse_generator_source(self):
        self.assertEqual(parse_generator_source('gen:pudo:3:7'), ('pudo', 3, 7))
        self.assertIsNone(parse_generator_source('scenarios/*.json'))
        with self.assertRaises(ValueError):
            parse_generator_source('gen:pudo:3')
        with self.assertRaises(ValueError):
            parse_generator_source('gen:roundabout:1:0')

    def test_resolve_glob(self):
        with tempfile.TemporaryDirectory() as tmp:
            for scenario in generate_suite('blocked', 2, params=GeneratorParams(duration=5.0)):
                save_scenario(scenario, Path(tmp) / f"{scenario.scenario_id}.json")
            loaded = resolve_scenarios(str(Path(tmp) / '*.json'))
        self.assertEqual([s.scenario_id for s in loaded], ['blocked-0-0000', 'blocked-0-0001'])
        self.assertEqual(loaded[0].duration, 5.0)

    def test_resolve_no_match(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ValueError):
                resolve_scenarios(str(Path(tmp) / '*.json'))


if __name__ == '__main__':
    unittest.main()
