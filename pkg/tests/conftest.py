import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qkd_pipeline.ec.reconcile import default_family
from qkd_pipeline.params import ChannelDetectorParams, ProtocolParams

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def params():
    return ProtocolParams()


@pytest.fixture(scope="session")
def channel():
    return ChannelDetectorParams()


@pytest.fixture(scope="session")
def family():
    return default_family()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
