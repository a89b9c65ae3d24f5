import os

import pytest
from hypothesis import HealthCheck, settings

from amdiqkd import Analysis, ChannelPair, DeviceParams

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("quick", deadline=None, max_examples=15,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def dev():
    return DeviceParams()


@pytest.fixture
def finite():
    return Analysis.finite(1e11)


@pytest.fixture
def asym_channel():
    # the (10 km, 60 km) comparison point with Alice on the long arm
    return ChannelPair(60, 10)
