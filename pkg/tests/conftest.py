import pytest
from hypothesis import HealthCheck, settings

from interventional.config import reset_config
from tests.mocks import saturated_dataset, uniform_dgp

settings.register_profile("interventional", suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("interventional")


@pytest.fixture(autouse=True)
def clear_config():
    """every test starts and ends with the library defaults"""
    reset_config()
    yield
    reset_config()


@pytest.fixture
def strata():
    """two covariate strata with known propensities and conditional effects"""
    return saturated_dataset()


@pytest.fixture
def identity_dgp():
    """X ~ U(0, 1), p0(x) = x, tau(x) = x"""
    return uniform_dgp()
