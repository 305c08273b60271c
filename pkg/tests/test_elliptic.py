from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fblab.elliptic import (
    DirichletForm,
    closeness_check,
    default_tol,
    harmonic_replacement,
    neumann_halfball_solve,
    solve_restricted,
)
from fblab.errors import PreconditionError
from fblab.lattice import Ball, GridFunction, box_grid, cell_mask, dirichlet_energy, free_nodes, node_mask, sample


def saddle(x):
    return x[0] ** 2 - x[1] ** 2


def test_linear_data_is_reproduced():
    grid = box_grid(1.0, 1 / 64)
    u = sample(lambda x: 2 + x[0] - 0.5 * x[1], grid)
    v, diag = harmonic_replacement(u, Ball.unit(2, 0.9))
    assert diag.converged and diag.residual <= default_tol(grid.h)
    assert np.max(np.abs(v.values - u.values)) <= 1e-8


def test_saddle_is_reproduced_to_second_order():
    for h in (1 / 64, 1 / 128):
        grid = box_grid(1.0, h)
        u = sample(saddle, grid, role="signed")
        v, _ = harmonic_replacement(u, Ball.unit(2, 0.9))
        assert np.max(np.abs(v.values - u.values)) <= 10 * h**2


def test_mean_value_of_square_norm():
    h = 1 / 128
    grid = box_grid(1.0, h)
    u = sample(lambda x: np.sum(x**2, axis=0), grid)
    v, _ = harmonic_replacement(u, Ball.unit(2, 0.9))
    # the ring sits up to one spacing off the sphere |x| = 0.9
    assert v.at((0.0, 0.0)) == pytest.approx(0.81, abs=h)


def test_replacement_matches_outside_and_obeys_max_principle():
    grid = box_grid(1.0, 1 / 64)
    rng = np.random.default_rng(0)
    u = GridFunction(grid, rng.random(grid.shape))
    B = Ball((0.1, 0.0), 0.7)
    v, _ = harmonic_replacement(u, B)
    cells = cell_mask(grid, B)
    free = free_nodes(cells)
    assert np.array_equal(v.values[~free], u.values[~free])
    ring = node_mask(grid, B.scaled(1.05)) & ~free
    assert v.values[free].min() >= u.values[ring].min() - 1e-9
    assert v.values[free].max() <= u.values[ring].max() + 1e-9


def test_replacement_is_idempotent():
    grid = box_grid(1.0, 1 / 64)
    u = sample(lambda x: 1 + np.sin(3 * x[0]) * np.cos(2 * x[1]), grid)
    B = Ball.unit(2, 0.8)
    v, _ = harmonic_replacement(u, B)
    w, _ = harmonic_replacement(v, B)
    assert np.max(np.abs(w.values - v.values)) <= 10 * default_tol(grid.h)


def test_direct_and_iterative_agree():
    grid = box_grid(1.0, 1 / 64)
    u = sample(lambda x: 1 + np.exp(x[0]) * np.cos(x[1]) + x[0] ** 3, grid)
    B = Ball.unit(2, 0.9)
    a, _ = harmonic_replacement(u, B, method="cg")
    b, _ = harmonic_replacement(u, B, method="direct")
    assert np.max(np.abs(a.values - b.values)) <= 1e-6


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_replacement_minimizes_dirichlet_energy(seed):
    rng = np.random.default_rng(seed)
    grid = box_grid(1.0, 1 / 32)
    u = GridFunction(grid, rng.random(grid.shape))
    B = Ball.unit(2, 0.8)
    v, _ = harmonic_replacement(u, B)
    Ev = dirichlet_energy(v, B)
    free = free_nodes(cell_mask(grid, B))
    for _ in range(10):
        w = v.values + np.where(free, 0.05 * rng.normal(size=grid.shape), 0.0)
        assert Ev <= dirichlet_energy(GridFunction(grid, w, "signed"), B) + 1e-12
    assert Ev <= dirichlet_energy(u, B) + 1e-12


def test_closeness_of_harmonic_data_is_zero():
    grid = box_grid(1.0, 1 / 64)
    u = sample(lambda x: 2 + x[1], grid)
    rep = closeness_check(u, Ball.unit(2, 0.9), sigma=0.1)
    assert rep.sup_difference <= 1e-8


def test_closeness_of_bump_equals_amplitude_at_center():
    h = 1 / 128
    grid = box_grid(1.0, h)
    u = sample(lambda x: 2 + x[1] + 0.01 * (1 - np.sum(x**2, axis=0)), grid)
    rep = closeness_check(u, Ball.unit(2, 0.99), sigma=0.1)
    # the ring carries 0.01 (1 - |x|^2) = O(h) off the sphere, shifting the replacement by at most 0.02 h
    assert rep.sup_difference == pytest.approx(0.01, abs=10 * h**2 + 0.02 * h)


def test_closeness_requires_positivity():
    grid = box_grid(1.0, 1 / 32)
    with pytest.raises(PreconditionError):
        closeness_check(sample(lambda x: np.maximum(x[1], 0.0), grid), Ball.unit(2, 0.9), 0.1)


def test_closeness_exponent_along_bump_family():
    h = 1 / 128
    grid = box_grid(1.0, h)
    B = Ball.unit(2, 0.99)
    sups, sigmas = [], []
    for t in (0.005, 0.01, 0.02, 0.04, 0.08):
        u = sample(lambda x, t=t: 2 + x[1] + t * (1 - np.sum(x**2, axis=0)), grid)
        v, _ = harmonic_replacement(u, B)
        sigma = dirichlet_energy(u, B) - dirichlet_energy(v, B)
        sups.append(closeness_check(u, B, sigma).sup_difference)
        sigmas.append(sigma)
    slope = np.polyfit(np.log(sigmas), np.log(sups), 1)[0]
    assert slope >= 1 / 4 - 0.1


def test_neumann_saddle():
    for h in (1 / 64, 1 / 128):
        grid = box_grid(1.0, h)
        v, diag = neumann_halfball_solve(saddle, grid)
        assert diag.converged
        upper = node_mask(grid, Ball.unit(2, 0.5)) & (grid.nodes[1] >= 0)
        assert np.max(np.abs(v.values - saddle(grid.nodes))[upper]) <= 10 * h**2


def test_neumann_linear_and_constant():
    grid = box_grid(1.0, 1 / 64)
    upper = node_mask(grid, Ball.unit(2, 0.5)) & (grid.nodes[1] >= 0)
    v, _ = neumann_halfball_solve(lambda x: x[0], grid)
    assert np.max(np.abs(v.values - grid.nodes[0])[upper]) <= 1e-8
    c, _ = neumann_halfball_solve(lambda x: np.full(x.shape[1:], 3.0), grid)
    assert np.max(np.abs(c.values - 3.0)[upper]) <= 1e-8


def test_neumann_flat_difference_vanishes():
    h = 1 / 64
    grid = box_grid(1.0, h)
    v, _ = neumann_halfball_solve(lambda x: x[0] ** 2 - x[1] ** 2 + 0.3 * x[0], grid)
    j0 = grid.nearest_index((0.0, 0.0))[1]
    row = np.abs(grid.nodes[0][:, j0]) < 0.3
    diff = np.abs(v.values[:, j0 + 1] - v.values[:, j0])[row]
    # the reflected scheme makes the one-sided difference second order: O(h^2) from the data term -x2^2
    assert diff.max() <= 2 * h**2


def test_neumann_rejects_nonfinite_data():
    grid = box_grid(1.0, 1 / 32)
    with pytest.raises(PreconditionError):
        neumann_halfball_solve(lambda x: np.full(x.shape[1:], np.inf), grid)


def test_neumann_maximum_principle():
    grid = box_grid(1.0, 1 / 64)
    rng = np.random.default_rng(1)
    data = GridFunction(grid, rng.random(grid.shape), "signed")
    v, _ = neumann_halfball_solve(data)
    upper = node_mask(grid, Ball.unit(2, 0.45)) & (grid.nodes[1] >= 0)
    assert v.values[upper].min() >= -1e-9 and v.values[upper].max() <= 1 + 1e-9


def test_restricted_solve_residual_matches_tolerance():
    grid = box_grid(1.0, 1 / 32)
    cells = cell_mask(grid, Ball.unit(2, 0.9))
    unknown = free_nodes(cells)
    u = sample(lambda x: np.cos(x[0]) + 2, grid)
    system = DirichletForm(grid, cells).restricted(unknown, u.values)
    x, diag = solve_restricted(system, None)
    assert system.residual(x) == pytest.approx(diag.residual, rel=1e-6, abs=1e-14)
    assert math.isfinite(diag.residual) and diag.residual <= diag.tolerance
