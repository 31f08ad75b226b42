import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from icos.geometry import random_rotation

settings.register_profile("icos", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("icos")

# Lines appended by the acceptance module, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def unit_vectors(rng, n):
    x = rng.standard_normal((n, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def rotation_from(rng):
    return random_rotation(rng)
