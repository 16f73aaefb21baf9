import numpy as np
import pytest

from geoxray import manifold as mf
from geoxray import rays as ry
from geoxray import tensor as tn


@pytest.fixture(scope="session")
def euclid():
    return mf.EuclideanMetric()


@pytest.fixture(scope="session")
def lam():
    return mf.ExpConformalMetric(0.1)


@pytest.fixture(scope="session")
def fgrid():
    return tn.FieldGrid(128, 1.25)


@pytest.fixture(scope="session")
def small_grid():
    return tn.FieldGrid(64, 1.25)


@pytest.fixture(scope="session")
def fan_e(euclid):
    return ry.fan_grid(euclid, 256, 256)


@pytest.fixture(scope="session")
def fan_l(lam):
    return ry.fan_grid(lam, 256, 256)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line[1])
