import yaml
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from src.core.hmm_matcher import EmissionParams, TransitionParams
from src.core.icp_localizer import IcpParams
from src.core.pipeline import PipelineParams
from src.core.simulator import SimConfig
from src.utils.errors import ConfigError

BASE_DIR = Path(__file__).resolve().parent.parent.parent
DEFAULT_CONFIG_FILE = BASE_DIR / "config" / "config.yaml"
DEFAULT_SIM_CONFIG_FILE = BASE_DIR / "config" / "sim.yaml"


@dataclass(frozen=True)
class RunConfig:
    vehicle_sigma: float = 20.0
    lane_sigma: float = 3.0
    gamma: float = 50.0
    eps_heading: float = 1e-4
    eps_transition: float = 1e-4
    candidate_radius: float = 50.0
    lane_candidate_radius: float = 20.0
    path_cap: float = 300.0
    association_floor: float = 0.05
    lane_sample_interval: float = 1.0
    f_type: float = 2.0
    icp_max_iterations: int = 30
    icp_convergence_tol: float = 0.01
    icp_max_correspondence: float = 3.0
    icp_max_rotation: float = 10.0
    icp_translation_only: bool = False
    icp_min_points: int = 6
    icp_search_radius: float = 25.0
    icp_search_step: float = 0.5
    icp_rotation_step: float = 1.0
    lane_context_radius: float = 10.0
    lane_factor_floor: float = 1e-4
    scenario_floor: float = 1e-4
    stale_window: float = 2.0
    detection_time_tolerance: float = 0.05
    snap_tolerance: float = 0.5
    use_lane_factor: bool = True
    use_scenario_factor: bool = True
    pose_correction: bool = True

    @property
    def emission_params(self) -> EmissionParams:
        return EmissionParams(self.vehicle_sigma, self.eps_heading, self.candidate_radius)

    @property
    def lane_emission_params(self) -> EmissionParams:
        return EmissionParams(self.lane_sigma, self.eps_heading, self.lane_candidate_radius)

    @property
    def transition_params(self) -> TransitionParams:
        return TransitionParams(self.gamma, self.eps_transition, self.path_cap)

    @property
    def icp_params(self) -> IcpParams:
        return IcpParams(
            f_type=self.f_type,
            max_iterations=self.icp_max_iterations,
            convergence_tol=self.icp_convergence_tol,
            max_correspondence=self.icp_max_correspondence,
            max_rotation=self.icp_max_rotation,
            translation_only=self.icp_translation_only,
            min_points=self.icp_min_points,
            search_radius=self.icp_search_radius,
            search_step=self.icp_search_step,
            rotation_step=self.icp_rotation_step,
        )

    @property
    def pipeline_params(self) -> PipelineParams:
        return PipelineParams(
            emission=self.emission_params,
            transition=self.transition_params,
            icp=self.icp_params,
            lane_sigma=self.lane_sigma,
            lane_context_radius=self.lane_context_radius,
            lane_factor_floor=self.lane_factor_floor,
            scenario_floor=self.scenario_floor,
            use_lane_factor=self.use_lane_factor,
            use_scenario_factor=self.use_scenario_factor,
            pose_correction=self.pose_correction,
        )


def parse_overrides(pairs: Optional[Iterable[str]]) -> Dict[str, Any]:
    """Parse `key=value` overrides; values are read as YAML scalars."""
    overrides: Dict[str, Any] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"Override must look like key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid value for {key}: {e}")
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot (1e-4) as strings
            try:
                value = float(value)
            except ValueError:
                pass
        overrides[key.strip()] = value
    return overrides


class ConfigHandler:
    def __init__(self, config_file=None, overrides: Optional[Dict[str, Any]] = None):
        self.config_file = Path(config_file) if config_file is not None else DEFAULT_CONFIG_FILE
        self.logger = logging.getLogger(__name__)
        self.config: Dict[str, Any] = {}
        self._load_config()
        self.config.update(overrides or {})
        if not self.validate_config(self.config):
            raise ConfigError(f"Invalid configuration: {self.config_file}")
        self.run_config = self._build_run_config()

    def _load_config(self) -> None:
        """Load configuration from YAML file. A missing default file means all defaults."""
        if not self.config_file.exists():
            if self.config_file == DEFAULT_CONFIG_FILE:
                self.logger.warning(f"Configuration file not found: {self.config_file}; using defaults")
                return
            raise ConfigError(f"Configuration file not found: {self.config_file}")
        try:
            with open(self.config_file, "r") as f:
                loaded = yaml.safe_load(f)
        except yaml.YAMLError as e:
            self.logger.error(f"Error parsing YAML configuration: {e}")
            raise ConfigError(f"Error parsing YAML configuration {self.config_file}: {e}")
        if loaded is None:
            return
        if not isinstance(loaded, dict):
            raise ConfigError(f"Configuration must be a mapping: {self.config_file}")
        self.config = loaded

    def validate_config(self, config: dict) -> bool:
        """Check keys and value types against RunConfig"""
        defaults = {f.name: f.default for f in fields(RunConfig)}
        valid = True
        for key, value in config.items():
            if key not in defaults:
                self.logger.error(f"Unknown configuration key: {key}")
                valid = False
                continue
            expected = type(defaults[key])
            if expected is bool:
                ok = isinstance(value, bool)
            elif expected is int:
                ok = isinstance(value, int) and not isinstance(value, bool)
            else:
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            if not ok:
                self.logger.error(f"Invalid value for {key}: expected {expected.__name__}, got {value!r}")
                valid = False
        return valid

    def _build_run_config(self) -> RunConfig:
        values = {key: float(v) if isinstance(RunConfig.__dataclass_fields__[key].default, float) else v
                  for key, v in self.config.items()}
        run_config = replace(RunConfig(), **values)
        for name, value in (("lane_sigma", run_config.lane_sigma), ("lane_context_radius", run_config.lane_context_radius),
                            ("stale_window", run_config.stale_window), ("snap_tolerance", run_config.snap_tolerance)):
            if not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if run_config.detection_time_tolerance < 0:
            raise ConfigError(f"detection_time_tolerance must be non-negative, got {run_config.detection_time_tolerance}")
        if not 0.0 <= run_config.association_floor < 1.0:
            raise ConfigError(f"association_floor must be within [0, 1), got {run_config.association_floor}")
        if not 0.2 <= run_config.lane_sample_interval <= 5.0:
            raise ConfigError(f"lane_sample_interval must be within [0.2, 5], got {run_config.lane_sample_interval}")
        for name in ("lane_factor_floor", "scenario_floor"):
            if not 0.0 < getattr(run_config, name) < 1.0:
                raise ConfigError(f"{name} must be within (0, 1), got {getattr(run_config, name)}")
        # Parameter bundles validate their own ranges
        run_config.pipeline_params
        run_config.lane_emission_params
        return run_config

    def dump(self) -> str:
        """Effective configuration as YAML."""
        return yaml.safe_dump(asdict(self.run_config), sort_keys=True, default_flow_style=False)


def load_sim_config(config_file=None, overrides: Optional[Dict[str, Any]] = None) -> SimConfig:
    """
    Load a simulator configuration.

    Args:
        config_file: YAML file with `network`, `noise`, `detection` sections; defaults to config/sim.yaml
        overrides: Dotted-key overrides such as {"noise.gnss_sigma": 5.0}

    Returns:
        SimConfig
    """
    logger = logging.getLogger(__name__)
    path = Path(config_file) if config_file is not None else DEFAULT_SIM_CONFIG_FILE
    data: Dict[str, Any] = {}
    if path.exists():
        try:
            with open(path, "r") as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Error parsing YAML configuration {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"Simulator configuration must be a mapping: {path}")
    elif config_file is not None:
        raise ConfigError(f"Simulator configuration not found: {path}")
    else:
        logger.warning(f"Simulator configuration not found: {path}; using defaults")

    for key, value in (overrides or {}).items():
        section, _, name = key.rpartition(".")
        target = data
        if section:
            target = data.setdefault(section, {})
            if not isinstance(target, dict):
                raise ConfigError(f"Cannot override {key}: '{section}' is not a section")
        target[name] = value
    return SimConfig.from_dict(data)
