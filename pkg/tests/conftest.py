from __future__ import annotations

import math

import numpy as np
import pytest

from fblab.lattice import Ball, box_grid
from fblab.solver import fixture, generate_almost_minimizer, minimize_bernoulli

TILT = 0.1


def sqrt_bump(x: np.ndarray) -> np.ndarray:
    """``1 + 0.1 |x|^(1/2)``: oscillation ``0.1 (2r)^(1/2) <= 0.15 r^(1/2)`` on balls of radius r."""
    return 1.0 + 0.1 * np.sqrt(np.sqrt(np.sum(x**2, axis=0)))


def one(x: np.ndarray) -> np.ndarray:
    return np.ones(x.shape[1:])


@pytest.fixture(scope="session")
def grid128():
    return box_grid(1.0, 1 / 128)


@pytest.fixture(scope="session")
def half_plane_min(grid128):
    """Discrete minimizer with boundary data x2+ on B_1, h = 1/128."""
    g = fixture("half_plane", grid128)
    return minimize_bernoulli(g, Ball.unit(2))


@pytest.fixture(scope="session")
def tilted_min(grid128):
    """Discrete minimizer with boundary data ((cos t) x2 + (sin t) x1)^+, t = 0.1."""
    g = fixture("tilted_plane", grid128, slope=math.tan(TILT))
    return minimize_bernoulli(g, Ball.unit(2))


@pytest.fixture(scope="session")
def almost_min(grid128):
    """Minimizer of int a|grad u|^2 + chi with a = 1 + 0.1|x|^(1/2); declared (kappa, beta) = (0.15, 1/2)."""
    g = fixture("half_plane", grid128)
    return generate_almost_minimizer(sqrt_bump, one, g, domain=Ball.unit(2), kappa=0.15, beta=0.5)


@pytest.fixture(scope="session")
def solver_outputs(half_plane_min, tilted_min, almost_min):
    return {"half_plane": half_plane_min.u, "tilted": tilted_min.u, "almost": almost_min.u}


@pytest.fixture(scope="session")
def half_plane_min256():
    """Discrete minimizer with boundary data x2+ on B_1, h = 1/256."""
    grid = box_grid(1.0, 1 / 256)
    return minimize_bernoulli(fixture("half_plane", grid), Ball.unit(2))


@pytest.fixture(scope="session")
def tilted_min256():
    grid = box_grid(1.0, 1 / 256)
    return minimize_bernoulli(fixture("tilted_plane", grid, slope=math.tan(TILT)), Ball.unit(2))


@pytest.fixture(scope="session")
def almost_min256():
    grid = box_grid(1.0, 1 / 256)
    g = fixture("half_plane", grid)
    return generate_almost_minimizer(sqrt_bump, one, g, domain=Ball.unit(2), kappa=0.15, beta=0.5)


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    """Store one acceptance line; the terminal summary prints them in order."""
    ACCEPTANCE[criterion] = (passed, detail)
    print(f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split("-")[1])):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if passed else 'FAIL'}: {detail}")
