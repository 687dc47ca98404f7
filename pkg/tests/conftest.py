import numpy as np
import pytest
from hypothesis import settings

from semiflat.network import Dataset, NetworkParams

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_net(rng, d, h, m, activation="tanh", scale=1.0):
    return NetworkParams(activation, scale * rng.normal(size=(h, d + 1)), scale * rng.normal(size=(h, m)))


def random_data(rng, n, d, m):
    return Dataset(rng.uniform(-1, 1, size=(n, d)), rng.normal(size=(n, m)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
