"""
Experiment configuration and random device placement.

ScenarioConfig holds every constant of a run as a flat JSON document whose
keys carry their unit (_hz, _m, _db, _dbm, _dbm_per_hz). dB values are
converted to SI once, in network() and tx_power_watts.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Final, List, Tuple

import numpy as np

from .channel import DeviceProfile, NetworkConfig, dbm_to_watts, large_scale_gain
from .errors import ConfigError, InvalidInputError

logger = logging.getLogger(__name__)

# child streams of the run seed, one per concern
STREAM_PLACEMENT: Final[int] = 0
STREAM_DATA: Final[int] = 1
STREAM_SHARDS: Final[int] = 2
STREAM_PROBES: Final[int] = 3
STREAM_SWEEP: Final[int] = 4
NUM_STREAMS: Final[int] = 5

TUPLE_KEYS: Final[Tuple[str, ...]] = ("check_levels", "sweep_levels")


@dataclass(frozen=True)
class ScenarioConfig:
    """Every experiment constant; defaults reproduce the synthetic logistic-regression setup."""

    seed: int = 0
    num_devices: int = 6
    dimension: int = 1024

    total_bandwidth_hz: float = 10e3
    noise_psd_dbm_per_hz: float = -174.0
    cell_radius_m: float = 500.0
    exclusion_radius_m: float = 100.0
    shadowing_std_db: float = 8.0

    cpu_min_hz: float = 1e8
    cpu_max_hz: float = 1e9
    tx_power_dbm: float = 1.0
    cycles_per_batch: float = 1e8

    delta1: float = 0.9
    delta2: float = 0.25
    train_samples: int = 48000
    validation_samples: int = 12000
    regularization: float = 1e-6
    batch_size: int = 512
    lr_numerator: float = 5.0
    lr_offset: float = 10.0

    probe_q1: int = 4
    probe_q2: int = 6
    probe_rounds: int = 100
    probe_seeds: int = 5
    epsilon: float = 0.012

    q_init: float = 8.0
    q_max: float = 4096.0
    tolerance_s: float = 1e-6
    oracle_q_max: int = 64

    check_levels: Tuple[int, ...] = (8, 16)
    sweep_levels: Tuple[int, ...] = (2, 3, 4, 5, 6, 7, 8, 10, 12, 16, 24, 32)
    sweep_max_rounds: int = 600
    sweep_seeds: int = 5

    def __post_init__(self) -> None:
        positive = (
            "num_devices", "dimension", "total_bandwidth_hz", "cell_radius_m",
            "exclusion_radius_m", "cpu_min_hz", "cpu_max_hz", "cycles_per_batch",
            "train_samples", "regularization", "batch_size", "lr_numerator",
            "probe_rounds", "probe_seeds", "epsilon", "q_max", "tolerance_s",
            "sweep_max_rounds", "sweep_seeds",
        )
        for name in positive:
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")

        if self.validation_samples < 0 or self.shadowing_std_db < 0 or self.lr_offset < 0:
            raise ConfigError("validation_samples, shadowing_std_db and lr_offset must be >= 0")

        if not self.exclusion_radius_m < self.cell_radius_m:
            raise ConfigError("exclusion_radius_m must be below cell_radius_m")

        if self.cpu_min_hz > self.cpu_max_hz:
            raise ConfigError("cpu_min_hz must not exceed cpu_max_hz")

        if not (0.0 <= self.delta1 <= 1.0 and 0.0 <= self.delta2 <= 1.0):
            raise ConfigError("delta1 and delta2 must lie in [0, 1]")

        if self.probe_q1 == self.probe_q2:
            raise ConfigError("probe_q1 and probe_q2 must differ")

        if min(self.probe_q1, self.probe_q2, self.oracle_q_max) < 2 or self.q_init < 2:
            raise ConfigError("quantization levels must be >= 2")

        if self.probe_rounds < 3:
            raise ConfigError("probe_rounds must be at least 3")

        if any(int(q) != q or q < 1 for q in self.check_levels + self.sweep_levels):
            raise ConfigError("check_levels and sweep_levels must hold positive integers")

        if self.train_samples < self.num_devices:
            raise ConfigError("need at least one training sample per device")

    @property
    def tx_power_watts(self) -> float:
        return float(dbm_to_watts(self.tx_power_dbm))

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            total_bandwidth_hz=self.total_bandwidth_hz,
            noise_psd_w_per_hz=float(dbm_to_watts(self.noise_psd_dbm_per_hz)),
            cell_radius_m=self.cell_radius_m,
            exclusion_radius_m=self.exclusion_radius_m,
            shadowing_std_db=self.shadowing_std_db,
        )

    def streams(self) -> List[np.random.Generator]:
        """Independent generators for placement, data, shards, probes and the sweep."""

        return [np.random.default_rng(child)
                for child in np.random.SeedSequence(self.seed).spawn(NUM_STREAMS)]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key in TUPLE_KEYS:
            data[key] = list(data[key])

        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScenarioConfig':
        """Build a config from a flat mapping; unknown keys are an error."""

        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")

        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")

        values: Dict[str, Any] = {}
        for key, value in data.items():
            default = known[key].default
            try:
                if key in TUPLE_KEYS:
                    values[key] = tuple(int(v) for v in value)
                elif isinstance(default, bool) or isinstance(value, bool):
                    raise ConfigError(f"{key} must be a number")
                elif isinstance(default, int):
                    if int(value) != value:
                        raise ConfigError(f"{key} must be an integer, got {value}")
                    values[key] = int(value)
                else:
                    values[key] = float(value)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"invalid value for {key}: {e}")

        return cls(**values)

    def with_seed(self, seed: int) -> 'ScenarioConfig':
        data = self.to_dict()
        data["seed"] = int(seed)
        return ScenarioConfig.from_dict(data)


def load_config(path: str) -> ScenarioConfig:
    """Read a JSON config; missing keys keep their defaults."""

    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")

    return ScenarioConfig.from_dict(data)


def save_config(cfg: ScenarioConfig, path: str) -> None:
    try:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(cfg.to_dict(), f, indent=2)
            f.write("\n")
    except OSError as e:
        raise OSError(f"Could not save config to {path}: {e}")


@dataclass(frozen=True)
class DevicePlacement:
    """Where a device sits and what it drew for shadowing and CPU speed."""

    distance_m: float
    angle_rad: float
    shadowing_db: float
    cpu_hz: float
    large_scale_gain: float


def sample_annulus_distances(rng: np.random.Generator, count: int,
                             inner_m: float, outer_m: float) -> np.ndarray:
    """Distances of points uniform in area on the annulus [inner, outer]."""

    if not 0 <= inner_m < outer_m:
        raise InvalidInputError("annulus needs 0 <= inner < outer")

    return np.sqrt(rng.uniform(inner_m ** 2, outer_m ** 2, size=count))


def sample_scenario(cfg: ScenarioConfig) -> Tuple[List[DeviceProfile], List[DevicePlacement]]:
    """
    Place cfg.num_devices devices and derive their profiles.

    Distances are uniform in area on the annulus between the exclusion and
    cell radii, CPU speeds uniform on [cpu_min_hz, cpu_max_hz] and
    shadowing Gaussian in dB.

    Args:
        cfg: Scenario configuration; its placement stream is used.

    Returns:
        Device profiles and the placements they were derived from.
    """

    rng = cfg.streams()[STREAM_PLACEMENT]
    k = cfg.num_devices

    distances = sample_annulus_distances(rng, k, cfg.exclusion_radius_m, cfg.cell_radius_m)
    angles = rng.uniform(0.0, 2.0 * math.pi, size=k)
    shadowing = rng.normal(0.0, cfg.shadowing_std_db, size=k)
    cpus = rng.uniform(cfg.cpu_min_hz, cfg.cpu_max_hz, size=k)
    gains = np.atleast_1d(large_scale_gain(distances, shadowing))

    power = cfg.tx_power_watts
    profiles: List[DeviceProfile] = []
    placements: List[DevicePlacement] = []
    for i in range(k):
        profiles.append(DeviceProfile(float(cpus[i]), cfg.cycles_per_batch, power, float(gains[i])))
        placements.append(DevicePlacement(float(distances[i]), float(angles[i]),
                                          float(shadowing[i]), float(cpus[i]), float(gains[i])))
        logger.debug("device %d at %.1f m, shadowing %.2f dB, cpu %.3g Hz",
                     i, distances[i], shadowing[i], cpus[i])

    return profiles, placements
