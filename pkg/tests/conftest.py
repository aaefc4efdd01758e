import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hairsh.farfield import bake_phase_sh_lut
from hairsh.fiber import FiberMaterial, bake_azimuthal_lut

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def material():
    return FiberMaterial.from_surface(math.radians(10.0), math.radians(-10.0), 1.55, (0.0, 0.0, 0.0))


@pytest.fixture(scope="session")
def colored_material(material):
    return material.with_sigma_a((0.3, 0.5, 0.9))


@pytest.fixture(scope="session")
def lut(material):
    return bake_azimuthal_lut(material)


@pytest.fixture(scope="session")
def phase_lut(material, lut):
    return bake_phase_sh_lut(material, lut)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
