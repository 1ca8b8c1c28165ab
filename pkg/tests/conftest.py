import numpy as np
import pytest
from hypothesis import settings

from scatterlab.systems import PotentialSpec, make_dispersive, make_poincare_ball, make_tube

settings.register_profile("scatterlab", max_examples=40, deadline=None)
settings.load_profile("scatterlab")

BUMP = PotentialSpec(((0.0, 0.0),), (1.0,), (0.5,))


@pytest.fixture(scope="session")
def bump_system():
    return make_dispersive("quadratic", 2, BUMP)


@pytest.fixture(scope="session")
def free_system():
    return make_dispersive("quadratic", 2)


@pytest.fixture(scope="session")
def rel_system():
    return make_dispersive("relativistic", 2, BUMP)


@pytest.fixture(scope="session")
def tube_system():
    return make_tube(1, PotentialSpec(((0.0, 0.25),), (0.4,), (0.6,)))


@pytest.fixture(scope="session")
def ball_system():
    return make_poincare_ball(2, PotentialSpec(((0.0, 0.0),), (0.4,), (0.3,)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


#: one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
