"""
Unit tests for ConfigManager and the typed params
"""
import os
import unittest
import tempfile
import yaml
import sys
from pathlib import Path
from unittest import mock

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from sketchwrap.config_manager import (
    ConfigManager,
    Mode,
    MpcParams,
    Params,
    PARAMS_ENV_VAR,
    VehicleGeometry,
    WrapperConfig,
    resolve_params_path,
)


class TestConfigManager(unittest.TestCase):
    """Test cases for ConfigManager."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_config = tempfile.NamedTemporaryFile(
            mode='w',
            suffix='.yaml',
            delete=False
        )

        sample_config = {
            'wrapper': {
                'mode': 'StayAhead',
                'horizon_steps': 12,
            },
            'mpc': {
                'w_soft': 25.0,
                'vehicle': {'width': 1.9},
            },
            'sim': {
                'debounce': 2.0,
            }
        }

        yaml.dump(sample_config, self.temp_config)
        self.temp_config.close()

        self.config_manager = ConfigManager(config_path=self.temp_config.name)

    def tearDown(self):
        """Clean up test fixtures."""
        Path(self.temp_config.name).unlink(missing_ok=True)
        Path(f"{self.temp_config.name}.backup").unlink(missing_ok=True)

    def test_load_config(self):
        """Test loading configuration."""
        config = self.config_manager.load_config()
        self.assertIn('wrapper', config)
        self.assertIn('mpc', config)

    def test_config_file_accessible(self):
        self.assertTrue(self.config_manager.is_config_file_accessible())

    def test_typed_params_override_defaults(self):
        params = self.config_manager.get_params()
        self.assertEqual(params.wrapper.mode, Mode.STAY_AHEAD)
        self.assertEqual(params.wrapper.horizon_steps, 12)
        self.assertEqual(params.mpc.w_soft, 25.0)
        self.assertEqual(params.mpc.vehicle.width, 1.9)
        self.assertEqual(params.mpc.vehicle.front, VehicleGeometry().front)
        self.assertEqual(params.sim.debounce, 2.0)
        self.assertEqual(params.idm, Params().idm)

    def test_get_mode(self):
        self.assertEqual(self.config_manager.get_mode(), Mode.STAY_AHEAD)

    def test_set_value_persists_with_backup(self):
        self.assertTrue(self.config_manager.set_value('mpc', 'w_j', 0.1))
        self.assertTrue(Path(f"{self.temp_config.name}.backup").exists())
        reloaded = ConfigManager(config_path=self.temp_config.name).get_params()
        self.assertEqual(reloaded.mpc.w_j, 0.1)
        self.assertEqual(reloaded.mpc.w_soft, 25.0)

    def test_set_value_rejects_unknown_key(self):
        with self.assertRaises(ValueError):
            self.config_manager.set_value('mpc', 'no_such_weight', 1.0)

    def test_write_defaults_round_trips(self):
        self.assertTrue(self.config_manager.write_defaults())
        self.assertEqual(self.config_manager.get_params(), Params())

    def test_json_params_file(self):
        """JSON is accepted through the YAML loader."""
        with tempfile.NamedTemporaryFile('w', suffix='.json', delete=False) as f:
            f.write('{"wrapper": {"mode": "Map", "use_tracking": false}}')
        try:
            params = ConfigManager(config_path=f.name).get_params()
            self.assertEqual(params.wrapper.mode, Mode.MAP)
            self.assertFalse(params.wrapper.use_tracking)
        finally:
            Path(f.name).unlink(missing_ok=True)

    def test_missing_file_raises(self):
        with self.assertRaises(FileNotFoundError):
            ConfigManager(config_path='/nonexistent/params.yaml').load_config()


class TestParamsResolution(unittest.TestCase):
    """Explicit flag, then MW_PARAMS, then defaults."""

    def test_explicit_path_wins(self):
        with mock.patch.dict(os.environ, {PARAMS_ENV_VAR: '/env/params.yaml'}):
            self.assertEqual(resolve_params_path('/flag/params.yaml'), '/flag/params.yaml')

    def test_env_var_fallback(self):
        with mock.patch.dict(os.environ, {PARAMS_ENV_VAR: '/env/params.yaml'}):
            self.assertEqual(resolve_params_path(None), '/env/params.yaml')

    def test_defaults_without_file(self):
        with mock.patch.dict(os.environ, {PARAMS_ENV_VAR: ''}):
            manager = ConfigManager()
            self.assertEqual(manager.load_config(), {})
            self.assertEqual(manager.get_params(), Params())


class TestConfigValidation(unittest.TestCase):
    """Test configuration validation."""

    def test_unknown_section_rejected(self):
        with self.assertRaises(ValueError):
            Params.from_dict({'planner': {}})

    def test_mode_parsing(self):
        self.assertEqual(Mode.parse('stay_ahead'), Mode.STAY_AHEAD)
        self.assertEqual(Mode.parse('Stay-Behind'), Mode.STAY_BEHIND)
        with self.assertRaises(ValueError):
            Mode.parse('aggressive')

    def test_mode_levels_are_progressive(self):
        self.assertTrue(Mode.STAY_AHEAD.at_least(Mode.MAP))
        self.assertFalse(Mode.TRACKING.at_least(Mode.MAP))
        self.assertEqual([m.level for m in Mode], [0, 1, 2, 3, 4])

    def test_invalid_horizon(self):
        with self.assertRaises(ValueError):
            WrapperConfig(horizon_steps=1)

    def test_positive_defaults(self):
        """Weights and limits are positive where the cost needs them."""
        mpc = MpcParams()
        for key in ('w_track', 'w_n', 'w_omega', 'w_j', 'w_dbeta', 'w_soft', 'v_max', 'beta_max'):
            self.assertGreater(getattr(mpc, key), 0, f"{key} should be positive")
        self.assertLess(mpc.a_min, 0)


if __name__ == '__main__':
    unittest.main()
