import pytest
from hypothesis import HealthCheck, settings

from jtmakit.model import JtmaParams

# every property test draws at least 100 examples from a fixed seed
settings.register_profile("repro", max_examples=100, derandomize=True, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repro")


@pytest.fixture
def p810():
    return JtmaParams(sigma_p=7.45, sigma_s=151.1, sigma_c=103.2)


@pytest.fixture
def p1550():
    return JtmaParams(sigma_p=3.85, sigma_s=106.7, sigma_c=72.5)
