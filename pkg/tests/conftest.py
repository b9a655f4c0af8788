import random

import pytest
from hypothesis import HealthCheck, settings

from pcim.protocol import IMAGE_REQUESTOR, PATIENT, RADIOLOGIST, World

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def world():
    return World.create(seed=1)


@pytest.fixture
def cast(world):
    """A patient, a radiologist and two requestors on a fresh world."""
    return {
        "patient": world.add_actor("patient", PATIENT),
        "radiologist": world.add_actor("radiologist", RADIOLOGIST),
        "ir1": world.add_actor("ir1", IMAGE_REQUESTOR),
        "ir2": world.add_actor("ir2", IMAGE_REQUESTOR),
    }


@pytest.fixture
def rng():
    return random.Random(1234)
