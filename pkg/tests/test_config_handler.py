from dataclasses import asdict

import pytest
import yaml

from src.config.config_handler import ConfigHandler, RunConfig, load_sim_config, parse_overrides
from src.core.simulator import SimConfig
from src.utils.errors import ConfigError


def test_repository_config_matches_defaults():
    assert ConfigHandler().run_config == RunConfig()


def test_overrides_are_yaml_scalars():
    overrides = parse_overrides(["gamma=80", "use_lane_factor=false", "eps_heading=1e-3", "icp_min_points=4"])
    assert overrides == {"gamma": 80, "use_lane_factor": False, "eps_heading": 0.001, "icp_min_points": 4}
    run = ConfigHandler(overrides=overrides).run_config
    assert run.gamma == 80.0 and isinstance(run.gamma, float)
    assert run.use_lane_factor is False
    assert run.transition_params.gamma == 80.0
    assert run.emission_params.eps_heading == pytest.approx(0.001)
    assert run.icp_params.min_points == 4


def test_override_syntax():
    with pytest.raises(ConfigError):
        parse_overrides(["gamma"])


@pytest.mark.parametrize("overrides", [
    {"unknown_key": 1.0},
    {"gamma": "fast"},
    {"use_lane_factor": 1},
    {"icp_max_iterations": 2.5},
])
def test_invalid_keys_and_types(overrides):
    with pytest.raises(ConfigError):
        ConfigHandler(overrides=overrides)


@pytest.mark.parametrize("overrides", [
    {"lane_sigma": 0.0},
    {"vehicle_sigma": -1.0},
    {"association_floor": 1.0},
    {"lane_sample_interval": 0.1},
    {"scenario_floor": 0.0},
    {"detection_time_tolerance": -0.1},
    {"icp_max_rotation": 200.0},
])
def test_out_of_range_values(overrides):
    with pytest.raises(ConfigError):
        ConfigHandler(overrides=overrides)


def test_config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("gamma: 25\nuse_scenario_factor: false\n")
    run = ConfigHandler(path).run_config
    assert run.gamma == 25.0
    assert run.use_scenario_factor is False
    assert run.vehicle_sigma == RunConfig().vehicle_sigma


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        ConfigHandler(tmp_path / "missing.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("gamma: [1, 2\n")
    with pytest.raises(ConfigError):
        ConfigHandler(broken)
    listing = tmp_path / "list.yaml"
    listing.write_text("- gamma\n")
    with pytest.raises(ConfigError):
        ConfigHandler(listing)


def test_dump_round_trips():
    handler = ConfigHandler(overrides={"path_cap": 150.0})
    assert yaml.safe_load(handler.dump()) == asdict(handler.run_config)


def test_sim_config_defaults_and_overrides():
    assert load_sim_config() == SimConfig()
    config = load_sim_config(overrides={"noise.gnss_sigma": 5, "seed": 3, "route": "ramp_exit"})
    assert config.noise.gnss_sigma == 5
    assert config.seed == 3
    assert config.route == "ramp_exit"
    assert config.network == SimConfig().network


def test_sim_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_sim_config(tmp_path / "missing.yaml")
    with pytest.raises(ConfigError):
        load_sim_config(overrides={"noise.gnss_sigma": -1.0})
    with pytest.raises(ConfigError):
        load_sim_config(overrides={"network.unknown": 1})
