import numpy as np
import pytest

from iquant.model import build_gaussian_direct, build_mixture_model, build_uniform_direct

ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def mixture():
    return build_mixture_model()


@pytest.fixture(scope="session")
def small_mixture():
    """Coarse S grid for the vector engine."""
    return build_mixture_model(s_num=65, x_num=512)


@pytest.fixture(scope="session")
def gauss3():
    return build_gaussian_direct(3.0)


@pytest.fixture(scope="session")
def uniform01():
    return build_uniform_direct(0.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
