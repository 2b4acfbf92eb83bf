"""
Shared fixtures for the feelopt test suite.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src"))

from feelopt.core.channel import NetworkConfig  # noqa: E402
from feelopt.core.scenario import ScenarioConfig, sample_scenario  # noqa: E402

from .helpers import fit_from_h  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end or Monte Carlo checks")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def reference_fit():
    return fit_from_h()


@pytest.fixture
def network():
    return NetworkConfig()


@pytest.fixture
def default_profiles():
    profiles, _ = sample_scenario(ScenarioConfig())
    return profiles


@pytest.fixture
def small_config():
    return ScenarioConfig(
        seed=7, num_devices=3, dimension=64, train_samples=600, validation_samples=150,
        batch_size=64, probe_q1=2, probe_q2=8, probe_rounds=30, check_levels=(4,),
        sweep_levels=(2, 4, 8), sweep_max_rounds=150, oracle_q_max=12,
    )
