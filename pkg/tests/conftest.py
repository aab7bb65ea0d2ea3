import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _ROOT)

import numpy as np
import pytest

from ingest.synth import synth_generate
from market.env import DayInputs, EnvConfig
from market.household import Appliance, Category, Household


@pytest.fixture(scope="session")
def synth_series():
    """Ten days, three households, default noise."""
    return synth_generate(seed=42, days=10, households=3)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pc_only_household(eu_id="1", beta=0.5, levels=4, share=1.0):
    ac = Appliance(name="air_conditioner", category=Category.PC, beta=beta, levels=levels, share=share)
    return Household(eu_id, [ac])


@pytest.fixture
def flat_day():
    """Price 10 every hour and 2 kWh per hour for a single household."""
    return DayInputs(price=np.full(24, 10.0), loads=np.full((24, 1), 2.0), label="flat")


@pytest.fixture
def two_level_config():
    return EnvConfig(levels=2, lambda_max_fraction=0.9, rho=0.9)
