import numpy as np
import pytest

from shrinkflow import Shrinker, build_spectrum, make_grid, run
from shrinkflow.geometry import RadialGraph


@pytest.fixture(scope="session")
def circle():
    return Shrinker.round(1)


@pytest.fixture(scope="session")
def sphere():
    return Shrinker.round(2)


@pytest.fixture(scope="session")
def circle_spectrum(circle):
    return build_spectrum(circle)


@pytest.fixture(scope="session")
def sphere_spectrum(sphere):
    return build_spectrum(sphere)


@pytest.fixture(scope="session", params=[1, 2], ids=["S1", "S2"])
def spectrum(request, circle_spectrum, sphere_spectrum):
    return circle_spectrum if request.param == 1 else sphere_spectrum


def cos2_graph(shrinker, eps, grid=None):
    grid = make_grid(shrinker) if grid is None else grid
    return RadialGraph(shrinker, grid, eps * np.cos(2 * grid.theta))


@pytest.fixture(scope="session")
def cos2_trajectory(circle):
    return run(cos2_graph(circle, 1e-3), 3.0, 0.01)


@pytest.fixture(scope="session")
def constant_trajectory(circle):
    grid = make_grid(circle)
    return run(RadialGraph(circle, grid, np.full(grid.size, 1e-3)), 3.0, 0.01)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
