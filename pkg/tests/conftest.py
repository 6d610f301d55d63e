import numpy as np
import pytest

from cpaentropy.config import LORENZ_PUBLISHED_P
from cpaentropy.geometry import Box, GridSpec, build_box_triangulation
from cpaentropy.sysmodel import linear_model, lorenz_dissipation_box, lorenz_scaled


@pytest.fixture(scope="session")
def lorenz():
    return lorenz_scaled()


@pytest.fixture(scope="session")
def lorenz_box():
    return lorenz_dissipation_box()


@pytest.fixture(scope="session")
def coarse(lorenz_box):
    return build_box_triangulation(lorenz_box, GridSpec((12, 6, 10)))


@pytest.fixture(scope="session")
def small(lorenz_box):
    return build_box_triangulation(lorenz_box, GridSpec((6, 3, 5)))


@pytest.fixture(scope="session")
def published_p():
    return LORENZ_PUBLISHED_P.copy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy_linear():
    return linear_model(np.diag([1.0, -2.0]))


@pytest.fixture(scope="session")
def square_grid():
    return build_box_triangulation(Box((-1.0, -1.0), (1.0, 1.0)), GridSpec((4, 4)))


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.exp(rng.uniform(0, np.log(cond), n))
    return (q * w) @ q.T


def random_sym(rng, n):
    a = rng.standard_normal((n, n))
    return a + a.T


_CRITERIA_KEY = pytest.StashKey[list]()


@pytest.fixture
def record_criterion(request):
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_CRITERIA_KEY, [])

    def record(number, passed, detail):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        print(line)
        lines.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
