import math

import pytest

from sipht import FieldConfig, ModulationConfig

UT = 1e-6
MHZ = 2 * math.pi * 1e6


@pytest.fixture
def fig2_cfg():
    return FieldConfig(b_d=100 * UT, f_d=152e3, b_s=4 * UT, delta=0.065 * 2 * math.pi)


@pytest.fixture
def sipht_mod(fig2_cfg):
    return ModulationConfig.sipht(fig2_cfg)
