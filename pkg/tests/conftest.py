import numpy as np
import pytest

from robust_als.ssm import NoiseCovariances, StateSpaceModel


@pytest.fixture
def model():
    return StateSpaceModel.benchmark()


@pytest.fixture
def truth():
    return NoiseCovariances.scalar(5.0, 3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def scalar_model(f, g=1.0, h=1.0):
    return StateSpaceModel(F=[[f]], Gw=[[g]], H=[[h]])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
