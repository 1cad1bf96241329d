"""
Unit tests for the command-line front end
"""
import json
import logging
import shutil
import unittest
import sys
import tempfile
from pathlib import Path

import pandas as pd
import yaml
from click.testing import CliRunner

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from sketchwrap.cli import (
    EXIT_CRASH,
    EXIT_MALFORMED,
    EXIT_OK,
    ScenarioJob,
    cli,
    crash_row,
    metrics_table,
    parse_modes,
    run_job,
)
from sketchwrap.config_manager import ConfigManager, GeneratorParams, Mode, Params, WrapperConfig
from sketchwrap.report import AGGREGATE_ID, CSV_COLUMNS
from sketchwrap.scenarios import generate_scenario

QUIET = ['--log-level', 'ERROR']


def write_params(directory: Path, duration: float = 3.5) -> Path:
    path = directory / 'params.yaml'
    path.write_text(yaml.safe_dump({'generator': {'duration': duration}}))
    return path


class TestHelpers(unittest.TestCase):

    def test_parse_modes(self):
        self.assertEqual(parse_modes(None, Mode.MAP), [Mode.MAP])
        self.assertEqual(parse_modes('all', Mode.MAP), list(Mode))
        self.assertEqual(parse_modes('Baseline, stay_ahead', Mode.MAP), [Mode.BASELINE, Mode.STAY_AHEAD])
        with self.assertRaises(ValueError):
            parse_modes('Everything', Mode.MAP)

    def test_crash_row_is_empty(self):
        row = crash_row('s-1', WrapperConfig(mode=Mode.MAP, use_tracking=False))
        self.assertEqual(row['config'], 'Map-notrack')
        self.assertIsNone(row['coll'])
        self.assertEqual(list(row), CSV_COLUMNS)

    def test_run_job_reports_crash(self):
        scenario = generate_scenario('corridor', 0, params=GeneratorParams(duration=3.5))
        job = ScenarioJob(scenario, 'rrt', None, WrapperConfig(), Params(), None, False)
        row, reason = run_job(job)
        self.assertTrue(reason.startswith('ValueError'))
        self.assertEqual(row['scenario_id'], scenario.scenario_id)
        self.assertIsNone(row['dist_m'])

    def test_metrics_table_blocks(self):
        rows = [
            {'scenario_id': 'b', 'config': 'Map', 'coll': 1, 'road': 0, 'accel': 2, 'dist_m': 10.0,
             'runtime_ms_mean': None, 'solver_fail_count': 0},
            {'scenario_id': 'a', 'config': 'Map', 'coll': 0, 'road': 0, 'accel': 0, 'dist_m': 20.0,
             'runtime_ms_mean': None, 'solver_fail_count': 1},
            crash_row('c', WrapperConfig(mode=Mode.MAP)),
            {'scenario_id': 'a', 'config': 'Baseline', 'coll': 3, 'road': 1, 'accel': 0, 'dist_m': 5.0,
             'runtime_ms_mean': None, 'solver_fail_count': 0},
        ]
        table = metrics_table(rows, ['Map', 'Baseline'])
        self.assertEqual(list(table['scenario_id']), ['a', 'b', 'c', AGGREGATE_ID, 'a', AGGREGATE_ID])
        self.assertEqual(list(table['config']), ['Map'] * 4 + ['Baseline'] * 2)
        map_mean = table.iloc[3]
        self.assertAlmostEqual(map_mean['dist_m'], 15.0)
        self.assertAlmostEqual(map_mean['coll'], 0.5)
        self.assertAlmostEqual(table.iloc[5]['coll'], 3.0)


class TestCommands(unittest.TestCase):

    def setUp(self):
        self.runner = CliRunner()
        self.tmp = Path(tempfile.mkdtemp())
        self.params = write_params(self.tmp)

    def tearDown(self):
        # The group callback binds a console handler to the runner's stderr
        logging.getLogger('sketchwrap').handlers = []
        shutil.rmtree(self.tmp, ignore_errors=True)

    def invoke(self, *args):
        return self.runner.invoke(cli, [*QUIET, *args])

    def test_version(self):
        result = self.runner.invoke(cli, ['--version'])
        self.assertEqual(result.exit_code, 0)
        self.assertIn('sketchwrap', result.output)

    def test_run_writes_metrics_and_logs(self):
        out = self.tmp / 'results'
        result = self.invoke('run', '--scenarios', 'gen:corridor:2:0', '--config', 'Baseline,StayBehind',
                             '--params', str(self.params), '--out', str(out), '--save-logs')
        self.assertEqual(result.exit_code, EXIT_OK, result.output)

        table = pd.read_csv(out / 'metrics.csv')
        self.assertEqual(list(table.columns), CSV_COLUMNS)
        self.assertEqual(list(table['scenario_id']),
                         ['corridor-0-0000', 'corridor-0-0001', AGGREGATE_ID] * 2)
        self.assertEqual(list(table['config']), ['Baseline'] * 3 + ['StayBehind'] * 3)
        self.assertTrue(table['runtime_ms_mean'].isna().all())
        self.assertTrue((out / 'logs' / 'corridor-0-0000__StayBehind.ndjson').exists())

    def test_run_is_deterministic(self):
        tables = []
        for name in ('first', 'second'):
            out = self.tmp / name
            result = self.invoke('run', '--scenarios', 'gen:corridor:1:3', '--params', str(self.params),
                                 '--out', str(out))
            self.assertEqual(result.exit_code, EXIT_OK, result.output)
            tables.append((out / 'metrics.csv').read_bytes())
        self.assertEqual(tables[0], tables[1])

    def test_run_malformed_inputs(self):
        out = str(self.tmp / 'results')
        unknown_mode = self.invoke('run', '--scenarios', 'gen:corridor:1:0', '--config', 'Everything', '--out', out)
        self.assertEqual(unknown_mode.exit_code, EXIT_MALFORMED)
        no_match = self.invoke('run', '--scenarios', str(self.tmp / 'missing' / '*.json'), '--out', out)
        self.assertEqual(no_match.exit_code, EXIT_MALFORMED)
        bad_planner = self.invoke('run', '--scenarios', 'gen:corridor:1:0', '--planner', 'rrt', '--out', out)
        self.assertEqual(bad_planner.exit_code, EXIT_MALFORMED)
        bad_params = self.tmp / 'bad.yaml'
        bad_params.write_text(yaml.safe_dump({'wrapper': {'colour': 'red'}}))
        unknown_key = self.invoke('run', '--scenarios', 'gen:corridor:1:0', '--params', str(bad_params), '--out', out)
        self.assertEqual(unknown_key.exit_code, EXIT_MALFORMED)

    def test_exit_codes_are_distinct(self):
        self.assertEqual(len({EXIT_OK, EXIT_MALFORMED, EXIT_CRASH}), 3)

    def test_extract_prints_maneuver(self):
        sketch_path = self.tmp / 'sketch.json'
        waypoints = [[5.0 * k, 0.0, 0.625 * k] for k in range(17)]
        sketch_path.write_text(json.dumps({'waypoints': waypoints}))
        result = self.invoke('extract', '--sketch', str(sketch_path), '--mode', 'Tracking')
        self.assertEqual(result.exit_code, EXIT_OK, result.output)
        data = json.loads(result.stdout)
        self.assertEqual(data['mode'], 'Tracking')
        self.assertEqual(data['horizon_steps'], 16)
        self.assertTrue(data['tracking']['present'])
        self.assertEqual(len(data['bounds']['p_upper']), 17)

    def test_extract_rejects_bad_sketch(self):
        sketch_path = self.tmp / 'sketch.json'
        sketch_path.write_text(json.dumps({'waypoints': [[0.0, 0.0]]}))
        result = self.invoke('extract', '--sketch', str(sketch_path))
        self.assertEqual(result.exit_code, EXIT_MALFORMED)
        missing = self.invoke('extract', '--sketch', str(self.tmp / 'nope.json'))
        self.assertEqual(missing.exit_code, EXIT_MALFORMED)

    def test_generate(self):
        out = self.tmp / 'scenarios'
        result = self.invoke('generate', '--family', 'pudo', '--count', '2', '--seed', '4', '--out', str(out))
        self.assertEqual(result.exit_code, EXIT_OK, result.output)
        self.assertEqual(sorted(p.name for p in out.glob('*.json')), ['pudo-4-0000.json', 'pudo-4-0001.json'])

    def test_generate_rejects_unknown_family(self):
        result = self.invoke('generate', '--family', 'roundabout')
        self.assertNotEqual(result.exit_code, EXIT_OK)

    def test_render_frames(self):
        out = self.tmp / 'results'
        run = self.invoke('run', '--scenarios', 'gen:corridor:1:0', '--config', 'Map', '--params', str(self.params),
                          '--out', str(out), '--save-logs')
        self.assertEqual(run.exit_code, EXIT_OK, run.output)
        log_path = out / 'logs' / 'corridor-0-0000__Map.ndjson'

        frames = self.tmp / 'frames'
        result = self.invoke('render', '--log', str(log_path), '--frames', '30..31', '--out', str(frames))
        self.assertEqual(result.exit_code, EXIT_OK, result.output)
        self.assertEqual(sorted(p.name for p in frames.glob('*.svg')), ['frame_00030.svg', 'frame_00031.svg'])
        self.assertIn('<svg', (frames / 'frame_00031.svg').read_text())

        out_of_range = self.invoke('render', '--log', str(log_path), '--frames', '500', '--out', str(frames))
        self.assertEqual(out_of_range.exit_code, EXIT_MALFORMED)

    def test_report(self):
        csv_path = self.tmp / 'metrics.csv'
        pd.DataFrame([
            {'scenario_id': 'a', 'config': 'Baseline', 'coll': 1, 'road': 0, 'accel': 0, 'dist_m': 10.0,
             'runtime_ms_mean': None, 'solver_fail_count': 0},
            {'scenario_id': 'a', 'config': 'StayAhead', 'coll': 0, 'road': 0, 'accel': 1, 'dist_m': 12.0,
             'runtime_ms_mean': None, 'solver_fail_count': 0},
        ], columns=CSV_COLUMNS).to_csv(csv_path, index=False)
        html = self.tmp / 'report.html'
        result = self.invoke('report', '--metrics', str(csv_path), '--out', str(html))
        self.assertEqual(result.exit_code, EXIT_OK, result.output)
        self.assertIn('StayAhead', html.read_text())

        broken = self.tmp / 'broken.csv'
        broken.write_text('scenario_id,config\na,Baseline\n')
        self.assertEqual(self.invoke('report', '--metrics', str(broken)).exit_code, EXIT_MALFORMED)

    def test_bench(self):
        result = self.invoke('bench', '--scenarios', 'gen:corridor:1:0', '--mode', 'StayBehind', '--cycles', '2',
                             '--params', str(self.params))
        self.assertEqual(result.exit_code, EXIT_OK, result.output)
        self.assertIn('corridor-0-0000: 0 agent(s), 2 cycle(s)', result.output)
        self.assertIn('median', result.output)

    def test_init_params(self):
        path = self.tmp / 'defaults.yaml'
        result = self.invoke('init-params', '--out', str(path))
        self.assertEqual(result.exit_code, EXIT_OK, result.output)
        self.assertEqual(ConfigManager(str(path)).get_params(), Params())


if __name__ == '__main__':
    unittest.main()
