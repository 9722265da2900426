import time

import numpy as np
import pytest
from hypothesis import settings

from gradconstraint.convex_body import make_body
from gradconstraint.geometry import make_boundary_data, make_domain
from gradconstraint.obstacle_solver import Grid, make_integrand, solve_double_obstacle

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("repo")


class Timed:
    """Result of a cached computation plus the wall time it took."""

    def __init__(self, value, seconds):
        self.value = value
        self.seconds = seconds


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return Timed(out, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def ball():
    return make_body({"kind": "euclidean_ball", "dim": 2})


@pytest.fixture(scope="session")
def zero():
    return make_boundary_data({"kind": "zero"})


@pytest.fixture(scope="session")
def torsion():
    return make_integrand({"kind": "torsion"})


@pytest.fixture(scope="session")
def disk3():
    return make_domain({"kind": "disk", "R": 3.0})


@pytest.fixture(scope="session")
def torsion_disk3(disk3, zero, ball, torsion):
    """Plastic torsion of the R = 3 disk on the 129 x 129 lattice, levels kept."""
    grid = Grid.cover(disk3, 3.0 / 64)
    return timed(solve_double_obstacle, torsion, disk3, zero, ball, grid, keep_levels=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
