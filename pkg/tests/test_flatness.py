from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fblab.errors import PreconditionError, ValidationError
from fblab.flatness import (
    best_direction,
    c1alpha_fit,
    certificate_json,
    epsilon_rescale,
    extract_free_boundary,
    flatness,
    hausdorff_estimate,
    improve_flatness,
    iterate_flatness,
    linearization_residual,
)
from fblab.lattice import Ball, GridFunction, box_grid, sample
from fblab.solver import fixture


def x2_plus(x):
    return np.maximum(x[1], 0.0)


def half_plane_at(theta):
    nu = np.array([math.sin(theta), math.cos(theta)])
    return lambda x: np.maximum(np.tensordot(nu, x, axes=(0, 0)), 0.0)


# -- flatness and direction search ------------------------------------------------------------


def test_flatness_of_half_plane(grid128):
    u = sample(x2_plus, grid128)
    assert flatness(u, Ball.unit(2), (0.0, 1.0)) <= 10 * grid128.h
    cert = best_direction(u, Ball.unit(2))
    assert cert.deviation <= 10 * grid128.h
    assert np.allclose(cert.direction, (0.0, 1.0), atol=1e-4)
    assert abs(np.linalg.norm(cert.direction) - 1) <= 1e-12


def test_flatness_of_rotated_half_plane(grid128):
    u = sample(half_plane_at(0.1), grid128)
    assert flatness(u, Ball.unit(2), (0.0, 1.0)) == pytest.approx(math.sin(0.1), abs=10 * grid128.h)
    cert = best_direction(u, Ball.unit(2))
    assert math.atan2(cert.direction[0], cert.direction[1]) == pytest.approx(0.1, abs=1e-3)


def test_flatness_of_zero(grid128):
    u = sample(0.0, grid128)
    for nu in ((0.0, 1.0), (1.0, 0.0), (0.6, -0.8)):
        assert flatness(u, Ball.unit(2), nu) == pytest.approx(1.0)


def test_best_direction_separates_non_half_planes(grid128):
    u = fixture("wedge", grid128, gamma=1.5)
    assert best_direction(u, Ball.unit(2)).deviation > 10 * grid128.h


@settings(max_examples=10, deadline=None)
@given(theta=st.floats(0, 2 * math.pi), phi=st.floats(-0.5, 0.5))
def test_flatness_is_rotation_equivariant(theta, phi):
    grid = box_grid(1.0, 1 / 64)

    def f(x):
        return np.maximum(x[1] + 0.2 * x[0] ** 2, 0.0)

    c, s = math.cos(theta), math.sin(theta)
    R = np.array([[c, -s], [s, c]])
    u = sample(f, grid)
    ur = sample(lambda x: f(np.tensordot(R.T, x, axes=(1, 0))), grid)
    nu = np.array([math.sin(phi), math.cos(phi)])
    a = flatness(u, Ball.unit(2), nu)
    b = flatness(ur, Ball.unit(2), R @ nu)
    assert a == pytest.approx(b, abs=10 * grid.h)


# -- free boundary extraction --------------------------------------------------------------------


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_free_boundary_points_straddle(seed):
    rng = np.random.default_rng(seed)
    grid = box_grid(1.0, 1 / 16)
    u = GridFunction(grid, np.maximum(rng.normal(size=grid.shape) * 0.1, 0.0))
    fb = extract_free_boundary(u)
    assert fb.straddles(u)
    flat = u.values.ravel()
    for (a, b), p in zip(fb.edges, fb.points):
        pa = grid.nodes.reshape(2, -1)[:, a]
        pb = grid.nodes.reshape(2, -1)[:, b]
        # the point lies on its edge
        assert np.all(p >= np.minimum(pa, pb) - 1e-12) and np.all(p <= np.maximum(pa, pb) + 1e-12)
        assert (flat[a] > fb.threshold) != (flat[b] > fb.threshold)


def test_free_boundary_csv(tmp_path, grid128):
    fb = extract_free_boundary(sample(x2_plus, grid128), Ball.unit(2, 0.5))
    fb.write_csv(tmp_path / "fb.csv")
    lines = (tmp_path / "fb.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,n1,n2" and len(lines) == len(fb) + 1


def test_hausdorff_half_plane(grid128):
    fb = extract_free_boundary(sample(x2_plus, grid128))
    est = hausdorff_estimate(fb, Ball.unit(2, 0.5))
    assert est.content == pytest.approx(1.0, abs=20 * grid128.h)
    assert est.dimension == pytest.approx(1.0, abs=0.05)


def test_hausdorff_exterior_radial(grid128):
    u = fixture("exterior_radial", grid128, r0=0.3)
    est = hausdorff_estimate(extract_free_boundary(u))
    assert est.content == pytest.approx(2 * math.pi * 0.3, abs=20 * grid128.h)


def test_hausdorff_requires_points(grid128):
    with pytest.raises(PreconditionError):
        hausdorff_estimate(extract_free_boundary(sample(1.0, grid128)))


def test_c1alpha_fit_on_tilted_minimizer(tilted_min):
    fb = extract_free_boundary(tilted_min.u)
    assert c1alpha_fit(fb, Ball.unit(2, 0.25), 0.25) <= 1.0


# -- epsilon rescaling and linearization -------------------------------------------------------------


def test_epsilon_rescale_half_plane(grid128):
    r = epsilon_rescale(sample(x2_plus, grid128), 0.1)
    assert np.max(np.abs(r.values[r.defined])) <= 1e-9


def test_epsilon_rescale_graph():
    h = 1 / 256
    eps = 0.1
    g = lambda t: np.cos(3 * t)
    u = sample(lambda x: np.maximum(x[1] + eps * g(x[0]), 0.0), box_grid(1.0, h))
    r = epsilon_rescale(u, eps)
    zone = r.defined & (r.grid.nodes[1] > eps)
    assert np.max(np.abs(r.values - g(r.grid.nodes[0]))[zone]) <= 10 * h / eps


def test_epsilon_rescale_gate(grid128):
    with pytest.raises(ValidationError):
        epsilon_rescale(sample(x2_plus, grid128), grid128.h)


def test_linearization_half_plane(grid128):
    eps = 0.1
    rep = linearization_residual(sample(x2_plus, grid128), eps)
    assert rep.residual <= 10 * grid128.h / eps


def test_linearization_neumann_bump():
    h = 1 / 256
    eps = 0.05
    u = sample(lambda x: np.maximum(x[1] + eps * (x[0] ** 2 - x[1] ** 2), 0.0), box_grid(1.0, h))
    rep = linearization_residual(u, eps)
    assert rep.residual <= 10 * (h / eps + eps)


@pytest.mark.slow
def test_linearization_on_minimizer(half_plane_min256):
    eps = 0.05
    rep = linearization_residual(half_plane_min256.u, eps)
    assert rep.residual <= 0.2 * eps


# -- improvement of flatness ---------------------------------------------------------------------------


def test_improve_flatness_half_plane(grid128):
    cert = improve_flatness(sample(x2_plus, grid128), 0.1, 0.25)
    assert cert.scale == pytest.approx(1 / 8)
    assert cert.deviation <= 10 * grid128.h * 8


def test_improve_flatness_gates(grid128):
    u = sample(x2_plus, grid128)
    with pytest.raises(PreconditionError, match="free boundary"):
        improve_flatness(u, 0.1, 0.25, center=(0.0, 0.3))
    with pytest.raises(PreconditionError, match="flatness"):
        improve_flatness(sample(half_plane_at(0.3), grid128), 0.1, 0.25)
    with pytest.raises(PreconditionError, match="sigma"):
        improve_flatness(u, 0.1, 0.25, sigma=1.0)


def test_iterate_half_plane_stays_at_floor(grid128):
    it = iterate_flatness(sample(x2_plus, grid128))
    eta = it.eta
    for k, cert in enumerate(it.certificates):
        assert cert.deviation <= 10 * grid128.h / eta**k
        assert np.allclose(cert.direction, (0.0, 1.0), atol=1e-3)
    assert it.certificates[-1].scale >= 16 * grid128.h


def test_iterate_wedge_stalls():
    h = 1 / 512
    u = fixture("wedge", box_grid(1.0, h), gamma=1.5)
    it = iterate_flatness(u)
    assert not it.all_passed
    assert it.steps[1].factor == pytest.approx(1.0, abs=0.05)


def test_iteration_outputs(tmp_path, grid128):
    it = iterate_flatness(sample(x2_plus, grid128))
    it.write_csv(tmp_path / "decay.csv")
    header = (tmp_path / "decay.csv").read_text().splitlines()[0]
    assert header.startswith("step,scale,deviation,factor,bound,passed")
    data = json.loads(certificate_json(it.certificates))
    assert [c["scale"] for c in data] == [c.scale for c in it.certificates]
