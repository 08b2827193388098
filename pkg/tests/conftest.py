import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vbmm.config import DEFAULT_CONFIG_TEXT, parse_config
from vbmm.bench import build_problem, simulate_from_config
from vbmm.checks import random_model

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_model():
    return random_model(6, 4, seed=3)


@pytest.fixture(scope="session")
def model_12x16():
    return random_model(12, 16, seed=0)


@pytest.fixture(scope="session")
def shift_model():
    return random_model(12, 16, seed=1, equal_shift=True)


@pytest.fixture(scope="session")
def default_config():
    return parse_config(DEFAULT_CONFIG_TEXT)


@pytest.fixture(scope="session")
def desk_data(default_config):
    return simulate_from_config(default_config)


@pytest.fixture(scope="session")
def desk_problem(default_config, desk_data):
    return build_problem(default_config, desk_data)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
