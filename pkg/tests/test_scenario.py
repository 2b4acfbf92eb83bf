import json

import numpy as np
import pytest

from feelopt.core.channel import dbm_to_watts
from feelopt.core.errors import ConfigError
from feelopt.core.scenario import (ScenarioConfig, load_config, sample_annulus_distances,
                                   sample_scenario, save_config)


def test_defaults():
    cfg = ScenarioConfig()
    assert cfg.num_devices == 6
    assert cfg.dimension == 1024
    assert cfg.cell_radius_m == 500.0
    assert cfg.exclusion_radius_m == 100.0
    assert cfg.shadowing_std_db == 8.0
    assert cfg.tx_power_dbm == 1.0
    assert (cfg.probe_q1, cfg.probe_q2, cfg.probe_rounds) == (4, 6, 100)
    assert cfg.epsilon == 0.012
    assert (cfg.batch_size, cfg.probe_seeds, cfg.sweep_seeds) == (512, 5, 5)


def test_units_are_converted_once():
    cfg = ScenarioConfig()
    net = cfg.network()
    assert net.total_bandwidth_hz == 10e3
    assert net.noise_psd_w_per_hz == pytest.approx(dbm_to_watts(-174.0))
    assert cfg.tx_power_watts == pytest.approx(10 ** -2.9)


def test_placements_stay_in_annulus():
    cfg = ScenarioConfig(num_devices=50, seed=3)
    profiles, placements = sample_scenario(cfg)

    assert len(profiles) == len(placements) == 50
    for profile, placement in zip(profiles, placements):
        assert 100.0 <= placement.distance_m <= 500.0
        assert 1e8 <= placement.cpu_hz <= 1e9
        assert profile.cpu_hz == placement.cpu_hz
        assert profile.large_scale_gain == placement.large_scale_gain
        assert profile.tx_power_watts == pytest.approx(cfg.tx_power_watts)
        assert profile.cycles_per_batch == 1e8


def test_annulus_sampling_is_uniform_in_area():
    distances = sample_annulus_distances(np.random.default_rng(0), 10_000, 100.0, 500.0)
    expected = (500.0 ** 2 + 100.0 ** 2) / 2
    assert np.mean(distances ** 2) == pytest.approx(expected, rel=0.02)


def test_scenario_is_deterministic():
    first, _ = sample_scenario(ScenarioConfig(seed=12))
    second, _ = sample_scenario(ScenarioConfig(seed=12))
    third, _ = sample_scenario(ScenarioConfig(seed=13))

    assert first == second
    assert first != third


def test_dict_round_trip():
    cfg = ScenarioConfig(seed=5, num_devices=4, sweep_levels=(2, 4), epsilon=0.02)
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
    assert json.loads(json.dumps(cfg.to_dict())) == cfg.to_dict()


def test_file_round_trip(tmp_path):
    cfg = ScenarioConfig(seed=9, check_levels=(8, 16, 32))
    path = tmp_path / "scenario.json"
    save_config(cfg, str(path))
    assert load_config(str(path)) == cfg


def test_partial_file_keeps_defaults(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"seed": 4, "num_devices": 3}), encoding="utf-8")
    cfg = load_config(str(path))
    assert cfg.seed == 4
    assert cfg.num_devices == 3
    assert cfg.dimension == 1024


def test_with_seed_overrides_only_seed():
    cfg = ScenarioConfig(seed=1, num_devices=3)
    reseeded = cfg.with_seed(8)
    assert reseeded.seed == 8
    assert reseeded.num_devices == 3


@pytest.mark.parametrize("data", [
    {"unknown_key": 1},
    {"num_devices": 0},
    {"num_devices": 2.5},
    {"probe_q1": 6, "probe_q2": 6},
    {"exclusion_radius_m": 600.0},
    {"cpu_min_hz": 2e9},
    {"delta1": 1.5},
    {"epsilon": -0.1},
    {"sweep_seeds": 0},
    {"sweep_levels": [2, "x"]},
    {"seed": True},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(data)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))

    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_config_error_exit_code():
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_dict({"nope": 1})
    assert info.value.exit_code == 2
