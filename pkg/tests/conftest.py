import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from streamal import mlp

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_arch():
    return mlp.MLPArch((4, 4, 3, 1), "tanh")


def two_clusters(rng, n=40, d=2, gap=4.0):
    """Linearly separable toy set: labels 1 around +gap/2, 0 around -gap/2 on the first axis."""
    y = np.r_[np.ones(n // 2), np.zeros(n - n // 2)]
    X = rng.standard_normal((n, d)) * 0.5
    X[:, 0] += np.where(y == 1, gap / 2, -gap / 2)
    return X, y


# one line per acceptance criterion, filled by test_acceptance.py
CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
