import numpy as np
import pytest

from latentgeo.data import make_synthetic_paraboloid
from latentgeo.generator import Paraboloid, PullbackMetric
from latentgeo.metric import FunctionMetric, identity_metric
from latentgeo.training import TrainConfig, train_autoencoder

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def warped_metric(dim=2):
    """``diag(1, 1 + z_1^2)`` padded with ones, with its exact derivative."""

    def fn(z):
        m = np.broadcast_to(np.eye(dim), (len(z), dim, dim)).copy()
        m[:, 1, 1] = 1.0 + z[:, 0] ** 2
        return m

    def dfn(z):
        out = np.zeros((len(z), dim, dim, dim))
        out[:, 1, 1, 0] = 2.0 * z[:, 0]
        return out

    return FunctionMetric(dim, fn, dfn)


@pytest.fixture
def paraboloid_metric():
    return PullbackMetric(Paraboloid(2, 0.3), identity_metric(3))


@pytest.fixture(scope="session")
def paraboloid_data():
    return make_synthetic_paraboloid(300, seed=0)


@pytest.fixture(scope="session")
def trained_paraboloid(paraboloid_data):
    """The 2-3-3 tanh decoder trained for 2000 epochs (shared across tests)."""
    return train_autoencoder(paraboloid_data, cfg=TrainConfig(epochs=2000, seed=0))
