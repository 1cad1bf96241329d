"""
Configuration Manager for sketchwrap
Reads and writes the single params file (YAML or JSON) holding every tunable
of the wrapper, the MPC, the planners and the scenario generator.
"""

import os
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

from sketchwrap.logger import log_config_change

import logging

logger = logging.getLogger(__name__)

PARAMS_ENV_VAR = 'MW_PARAMS'


class Mode(str, Enum):
    """Ablation configurations, each enabling one more constraint source."""

    BASELINE = 'Baseline'
    TRACKING = 'Tracking'
    MAP = 'Map'
    STAY_BEHIND = 'StayBehind'
    STAY_AHEAD = 'StayAhead'

    @property
    def level(self) -> int:
        return list(Mode).index(self)

    def at_least(self, other: 'Mode') -> bool:
        return self.level >= other.level

    @classmethod
    def parse(cls, text: str) -> 'Mode':
        if isinstance(text, cls):
            return text
        key = str(text).replace('_', '').replace('-', '').lower()
        for mode in cls:
            if mode.value.lower() == key:
                return mode
        raise ValueError(f"Unknown mode '{text}' (expected one of {[m.value for m in cls]})")


@dataclass(frozen=True)
class VehicleGeometry:
    """Rectangle around the rear-axle reference point."""

    width: float = 2.0
    front: float = 4.0       # rear axle to front bumper
    rear: float = 1.0        # rear axle to rear bumper
    wheelbase: float = 3.0

    def __post_init__(self):
        for name in ('width', 'front', 'rear', 'wheelbase'):
            if getattr(self, name) <= 0:
                raise ValueError(f"VehicleGeometry.{name} must be positive")


@dataclass(frozen=True)
class WrapperConfig:
    mode: Mode = Mode.STAY_BEHIND
    use_tracking: bool = True
    horizon_steps: int = 16
    dt: float = 0.5
    dist_max: float = 5.0
    c_reg: float = 1.0
    projection_samples: int = 64
    lateral_relevance: float = 4.0
    longitudinal_trigger: float = 2.0
    pinch_width: float = 2.0
    lateral_buffer: float = 0.5
    long_buffer: float = 2.0
    soft_margin: float = 0.3
    max_ray: float = 10.0
    ray_spacing: float = 1.0
    c_tube: float = 0.5
    eps_min: float = 0.05
    space_heuristic: bool = True

    def __post_init__(self):
        if not isinstance(self.mode, Mode):
            object.__setattr__(self, 'mode', Mode.parse(self.mode))
        if self.horizon_steps < 2 or self.dt <= 0:
            raise ValueError("horizon_steps must be >= 2 and dt positive")
        if self.dist_max <= 0 or self.c_reg < 0 or self.ray_spacing <= 0:
            raise ValueError("dist_max and ray_spacing must be positive, c_reg non-negative")


@dataclass(frozen=True)
class MpcParams:
    w_track: float = 1.0
    w_n: float = 0.5
    w_omega: float = 1.0
    w_j: float = 0.05
    w_dbeta: float = 20.0
    w_soft: float = 50.0
    w_speed: float = 0.2
    terminal_factor: float = 10.0
    v_limit: float = 12.0
    v_max: float = 15.0
    a_min: float = -4.0
    a_max: float = 2.0
    beta_max: float = 0.6
    j_min: float = -8.0
    j_max: float = 8.0
    dbeta_max: float = 0.05
    min_offset_margin: float = 0.05
    tol: float = 1e-3
    feasibility_tol: float = 1e-3
    max_outer: int = 12
    inner_max_iter: int = 80
    brake_decel: float = -4.0
    vehicle: VehicleGeometry = field(default_factory=VehicleGeometry)


@dataclass(frozen=True)
class IdmParams:
    v0: float = 12.0
    T: float = 1.5
    a_max: float = 1.5
    b: float = 2.0
    s0: float = 2.0
    delta: float = 4.0
    b_max: float = 8.0
    lane_half_width: float = 1.75
    tail_length: float = 30.0

    def __post_init__(self):
        if min(self.v0, self.T, self.a_max, self.b, self.s0) <= 0 or self.delta < 1:
            raise ValueError("IDM parameters must be positive with delta >= 1")


@dataclass(frozen=True)
class AStarParams:
    turn_penalty: float = 0.5
    inflation: float = 1.0
    max_expansions: int = 400000
    speed: float = 6.0


@dataclass(frozen=True)
class SimParams:
    debounce: float = 1.0
    stuck_speed: float = 0.2
    stuck_window: float = 5.0


@dataclass(frozen=True)
class GeneratorParams:
    seed: int = 0
    duration: float = 30.0
    warmup: float = 3.0
    sim_rate: float = 10.0
    resolution: float = 0.5
    lane_width: float = 3.5
    road_length: float = 220.0


@dataclass(frozen=True)
class Params:
    wrapper: WrapperConfig = field(default_factory=WrapperConfig)
    mpc: MpcParams = field(default_factory=MpcParams)
    idm: IdmParams = field(default_factory=IdmParams)
    astar: AStarParams = field(default_factory=AStarParams)
    sim: SimParams = field(default_factory=SimParams)
    generator: GeneratorParams = field(default_factory=GeneratorParams)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'Params':
        """
        Build typed params from a nested dict, rejecting unknown keys.

        Args:
            data: Mapping of section name to overrides (missing keys keep defaults)

        Returns:
            Params instance
        """
        data = data or {}
        sections = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ValueError(f"Unknown params section(s): {sorted(unknown)}")

        built = {}
        for name, section_field in sections.items():
            default = section_field.default_factory()
            built[name] = _override(default, data.get(name) or {}, name)
        return cls(**built)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out['wrapper']['mode'] = self.wrapper.mode.value
        return out


def _override(instance, values: Dict[str, Any], prefix: str):
    known = {f.name: f for f in fields(instance)}
    changes = {}
    for key, value in values.items():
        if key not in known:
            raise ValueError(f"Unknown params key '{prefix}.{key}'")
        current = getattr(instance, key)
        if key == 'vehicle':
            value = _override(current, value or {}, f"{prefix}.vehicle")
        elif isinstance(current, Enum):
            value = Mode.parse(value)
        elif isinstance(current, bool):
            value = bool(value)
        elif isinstance(current, int):
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
        if value != current:
            log_config_change(f"{prefix}.{key}", current, value)
        changes[key] = value
    return replace(instance, **changes) if changes else instance


def resolve_params_path(explicit: Optional[str] = None) -> Optional[str]:
    """Explicit flag first, then MW_PARAMS (a .env file is honoured)."""
    if explicit:
        return explicit
    load_dotenv()
    return os.getenv(PARAMS_ENV_VAR) or None


class ConfigManager:
    """Manages the params file"""

    def __init__(self, config_path: Optional[str] = None):
        """
        Initialize config manager.

        Args:
            config_path: Optional path to the params file. Falls back to MW_PARAMS,
                then to built-in defaults.
        """
        self.config_path = resolve_params_path(config_path)
        self._config_cache = None

    def load_config(self) -> Dict[str, Any]:
        """
        Load configuration from the params file.

        Returns:
            Dict containing configuration (empty when no file is configured)

        Raises:
            FileNotFoundError: If the configured file doesn't exist
            yaml.YAMLError: If the file is not valid YAML/JSON
        """
        if not self.config_path:
            self._config_cache = {}
            return self._config_cache
        try:
            with open(self.config_path, 'r') as f:
                self._config_cache = yaml.safe_load(f) or {}
            logger.info(f"✅ Configuration loaded from {self.config_path}")
            return self._config_cache
        except FileNotFoundError:
            logger.error(f"❌ Params file not found: {self.config_path}")
            raise
        except yaml.YAMLError as e:
            logger.error(f"❌ Invalid params file: {e}")
            raise

    def get_params(self) -> Params:
        """Typed view of the loaded file."""
        return Params.from_dict(self.load_config())

    def save_config(self, config: Dict[str, Any]) -> bool:
        """
        Save configuration to the params file.

        Args:
            config: Configuration dictionary to save

        Returns:
            True if successful, False otherwise
        """
        if not self.config_path:
            logger.error("❌ No params file configured")
            return False

        backup_path = f"{self.config_path}.backup"
        try:
            # Create backup first
            if os.path.exists(self.config_path):
                with open(self.config_path, 'r') as src:
                    with open(backup_path, 'w') as dst:
                        dst.write(src.read())

            with open(self.config_path, 'w') as f:
                yaml.safe_dump(config, f, default_flow_style=False, sort_keys=False)

            self._config_cache = config
            logger.info(f"✅ Configuration saved to {self.config_path}")
            return True

        except Exception as e:
            logger.error(f"❌ Failed to save params: {e}")
            if os.path.exists(backup_path):
                with open(backup_path, 'r') as src:
                    with open(self.config_path, 'w') as dst:
                        dst.write(src.read())
                logger.info("⚠️  Params restored from backup")
            return False

    def write_defaults(self) -> bool:
        """Write the built-in defaults to the params file."""
        return self.save_config(Params().to_dict())

    def get_mode(self) -> Mode:
        """Get the configured ablation mode"""
        return self.get_params().wrapper.mode

    def set_value(self, section: str, key: str, value: Any) -> bool:
        """
        Update one entry after validating it against the typed params.

        Args:
            section: Params section (e.g. 'mpc')
            key: Key inside the section (e.g. 'w_soft')
            value: New value

        Returns:
            True if successful
        """
        config = self.load_config()
        candidate = dict(config)
        candidate[section] = dict(candidate.get(section) or {})
        candidate[section][key] = value
        Params.from_dict(candidate)
        return self.save_config(candidate)

    def is_config_file_accessible(self) -> bool:
        """Check if the params file exists and is readable"""
        return bool(self.config_path) and os.path.exists(self.config_path) and os.access(self.config_path, os.R_OK)
