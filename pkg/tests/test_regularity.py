from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fblab.elliptic import harmonic_replacement
from fblab.energy import rescale
from fblab.errors import ClaimFailure, DomainError, NotApplicable, PreconditionError, ValidationError
from fblab.flatness import extract_free_boundary
from fblab.lattice import Ball, GridFunction, box_grid, interpolate, sample
from fblab.regularity import (
    WeissProfile,
    average_gradient,
    blowup_sequence,
    campanato_iterate,
    dichotomy_step,
    gradient_deviation,
    gradient_near_free_boundary,
    harnack_gap,
    lipschitz_certificate,
    strong_nondegeneracy,
    weak_nondegeneracy,
    weiss_energy,
    weiss_profile,
)
from fblab.solver import fixture

ETAS = (1 / 4, 1 / 8, 1 / 16)


def x2_plus(x):
    return np.maximum(x[1], 0.0)


def linear(q):
    return lambda x: np.tensordot(np.asarray(q, dtype=float), x, axes=(0, 0))


# -- gradient averages -----------------------------------------------------------------------


def test_average_gradient_examples(grid128):
    h = grid128.h
    assert average_gradient(sample(linear((0.6, 0.8)), grid128, "signed"), Ball.unit(2)) == pytest.approx(1.0, abs=10 * h)
    assert average_gradient(sample(x2_plus, grid128), Ball.unit(2)) == pytest.approx(2**-0.5, abs=10 * h)
    assert average_gradient(sample(0.0, grid128), Ball.unit(2)) == 0.0


@settings(max_examples=10, deadline=None)
@given(rho=st.sampled_from([0.25, 0.5]), cx=st.floats(-0.3, 0.3), cy=st.floats(-0.3, 0.3))
def test_average_gradient_is_scale_equivariant(rho, cx, cy):
    grid = box_grid(1.0, 1 / 64)
    u = sample(lambda x: np.maximum(x[1] + 0.3 * x[0] ** 2, 0.0), grid)
    lhs = average_gradient(rescale(u, rho, (cx, cy), half_width=1.0).u, Ball.unit(2))
    rhs = average_gradient(u, Ball((cx, cy), rho))
    assert lhs == pytest.approx(rhs, abs=10 * grid.h / rho)


# -- dichotomy -------------------------------------------------------------------------------


@pytest.mark.parametrize("eta", ETAS)
def test_dichotomy_linear_is_gradient_flat(grid128, eta):
    M = 10.0
    q = (2 * M * 0.6, 2 * M * 0.8)
    u = sample(linear(q), grid128, "signed")
    out = dichotomy_step(u, eps=0.1, eta=eta, M=M)
    assert out.variant == "GradientFlat"
    assert np.allclose(out.q, q, atol=1e-6)
    assert out.deviation <= 10 * grid128.h
    assert out.a / 4 < np.linalg.norm(out.q) <= out.c0 * out.a + 1e-12


def test_dichotomy_not_applicable_below_M(grid128):
    u = sample(linear((5.0, 0.0)), grid128, "signed")
    with pytest.raises(NotApplicable):
        dichotomy_step(u, eps=0.1, M=10.0)


@pytest.mark.parametrize("eta", ETAS)
def test_dichotomy_on_normalized_minimizer(tilted_min, eta):
    M = 10.0
    ball = Ball((0.0, 0.5), 0.4)
    base = average_gradient(tilted_min.u, ball)
    u = tilted_min.u.with_values(tilted_min.u.values * (1.2 * M / base))
    out = dichotomy_step(u, eps=0.1, eta=eta, M=M, ball=ball)
    inner = ball.scaled(eta)
    # recompute the returned alternative from the grid
    if out.variant == "Decay":
        assert average_gradient(u, inner) <= out.a / 2
    else:
        assert gradient_deviation(u, inner, out.q) <= 0.1 * out.a
        assert out.a / 4 < np.linalg.norm(out.q)


def test_dichotomy_decay_branch():
    grid = box_grid(1.0, 1 / 128)
    # gradient concentrated near the sphere, nearly flat inside B_1/8
    u = sample(lambda x: 30 * (x[0] ** 8 - 28 * x[0] ** 6 * x[1] ** 2 + 70 * x[0] ** 4 * x[1] ** 4 - 28 * x[0] ** 2 * x[1] ** 6 + x[1] ** 8), grid, "signed")
    out = dichotomy_step(u, eps=0.1, eta=1 / 8, M=10.0)
    assert out.variant == "Decay" and out.a_eta <= out.a / 2


# -- Campanato iteration ---------------------------------------------------------------------


def test_campanato_linear(grid128):
    u = sample(linear((0.0, 1.0)), grid128, "signed")
    tr = campanato_iterate(u, (0.0, 1.0), alpha=0.5, rho=0.5, eps=0.1)
    assert all(np.allclose(q, (0.0, 1.0)) for q in tr.slopes)
    assert max(tr.deviations) <= 10 * grid128.h
    assert tr.verified and tr.radii[-1] >= 16 * grid128.h


def test_campanato_quadratic_exponent(grid128):
    u = sample(lambda x: x[1] + 0.01 * np.sum(x**2, axis=0), grid128, "signed")
    tr = campanato_iterate(u, (0.0, 1.0), alpha=0.5, rho=0.5, eps=0.1)
    assert tr.exponent >= 0.9
    assert tr.verified


def test_campanato_on_almost_minimizer(almost_min):
    u = almost_min.u
    center, R = (0.0, 0.5), 0.4
    B = Ball(center, R)
    from fblab.regularity import mean_gradient

    q0 = mean_gradient(u, B)
    tr = campanato_iterate(u, q0, alpha=0.25, rho=0.5, eps=0.1, center=center, radius=R)
    assert tr.verified, list(zip(tr.radii, tr.deviations, tr.bounds))


def test_campanato_gates(grid128):
    u = sample(linear((0.0, 1.0)), grid128, "signed")
    with pytest.raises(PreconditionError):
        campanato_iterate(u, (0.0, 10.0), alpha=0.5, rho=0.5, eps=0.1)
    with pytest.raises(PreconditionError):
        campanato_iterate(u, None, alpha=0.5, rho=0.5, eps=0.1)
    with pytest.raises(ValidationError):
        campanato_iterate(u, (0.0, 1.0), alpha=0.5, rho=1.5, eps=0.1)
    pos = sample(lambda x: 3 + x[1], grid128)
    assert campanato_iterate(pos, None, alpha=0.5, rho=0.5, eps=0.1, gate="average").verified


def test_campanato_csv(tmp_path, grid128):
    u = sample(linear((0.0, 1.0)), grid128, "signed")
    tr = campanato_iterate(u, (0.0, 1.0), alpha=0.5, rho=0.5, eps=0.1)
    tr.write_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0].startswith("scale,deviation")


# -- Lipschitz ---------------------------------------------------------------------------------


def test_lipschitz_half_plane(grid128):
    cert = lipschitz_certificate(sample(x2_plus, grid128))
    assert cert.value == pytest.approx(1.0, abs=10 * grid128.h)
    assert cert.certified


def test_lipschitz_constant(grid128):
    assert lipschitz_certificate(sample(5.0, grid128)).value == 0.0


def test_lipschitz_near_free_boundary(tilted_min, half_plane_min, almost_min):
    for res in (tilted_min, half_plane_min, almost_min):
        assert gradient_near_free_boundary(res.u, 0.1, Ball.unit(2, 0.95)) <= 2.2
        cert = lipschitz_certificate(res.u)
        assert cert.certified and cert.constant <= 4.0


# -- Harnack gap and non-degeneracy --------------------------------------------------------------


def test_harnack_constant_shift(grid128):
    w = sample(lambda x: 2 + x[1], grid128)
    u = w.with_values(w.values + 0.1)
    assert harnack_gap(u, w, Ball.unit(2, 0.9), 0.1) == pytest.approx(1.0)


def test_harnack_harmonic_bump(grid128):
    mu = 0.1
    w = sample(lambda x: 2 + x[1], grid128)
    u = sample(lambda x: 2 + x[1] + mu * (1 + 0.5 * x[0]), grid128)
    # 1 + x1/2 is harmonic; its minimum over B_1/2 is 3/4
    assert harnack_gap(u, w, Ball.unit(2), mu) == pytest.approx(0.75, abs=1e-9)


def test_harnack_on_almost_minimizer(almost_min):
    u = almost_min.u
    B = Ball((0.0, 0.55), 0.3)
    v, _ = harmonic_replacement(u, B)
    m = float(np.max(np.abs(u.values - v.values)))
    w = v.with_values(v.values - m, "signed")
    mu = float(interpolate(u.with_values(u.values - w.values, "signed"), B.center))
    assert mu > 0
    assert harnack_gap(u, w, B, mu) >= 0.1


def test_harnack_named_preconditions(grid128):
    w = sample(lambda x: 2 + x[1], grid128)
    with pytest.raises(PreconditionError, match="ordering"):
        harnack_gap(w.with_values(w.values - 0.1), w, Ball.unit(2, 0.9), 0.1)
    with pytest.raises(PreconditionError, match="center gap"):
        harnack_gap(w.with_values(w.values + 0.01), w, Ball.unit(2, 0.9), 0.1)
    with pytest.raises(PreconditionError, match="harmonic"):
        harnack_gap(w.with_values(w.values + 0.2), sample(lambda x: 1 + x[1] ** 2, grid128), Ball.unit(2, 0.9), 0.1)
    with pytest.raises(PreconditionError, match="positivity"):
        harnack_gap(sample(x2_plus, grid128), sample(0.0, grid128), Ball.unit(2, 0.9), 0.1)


def test_weak_nondegeneracy(grid128, half_plane_min):
    assert weak_nondegeneracy(sample(1.0, grid128), Ball.unit(2, 0.5)) == 1.0
    assert weak_nondegeneracy(sample(x2_plus, grid128), Ball((0.0, 0.5), 0.3)) == pytest.approx(0.5)
    assert weak_nondegeneracy(half_plane_min.u, Ball((0.0, 0.5), 0.2)) >= 0.01
    with pytest.raises(PreconditionError):
        weak_nondegeneracy(sample(x2_plus, grid128), Ball.unit(2, 0.3))


def test_strong_nondegeneracy_half_plane(grid128):
    out = strong_nondegeneracy(sample(x2_plus, grid128), (0.0, 0.0), [0.1, 0.2, 0.4])
    assert all(c == pytest.approx(1.0, abs=1e-12) for _, c in out)


def test_strong_nondegeneracy_exterior_radial():
    h = 1 / 256
    u = fixture("exterior_radial", box_grid(1.0, h), r0=0.25)
    (r, c), = strong_nondegeneracy(u, (0.25, 0.0), [0.1])
    assert c == pytest.approx(0.25 * math.log(1 + 0.1 / 0.25) / 0.1, abs=10 * h)


def test_strong_nondegeneracy_requires_free_boundary(grid128):
    with pytest.raises(PreconditionError):
        strong_nondegeneracy(sample(0.0, grid128), (0.0, 0.0), [0.1])
    with pytest.raises(DomainError):
        strong_nondegeneracy(sample(x2_plus, grid128), (0.0, 0.0), [2 * grid128.h])


# -- Weiss energy ----------------------------------------------------------------------------------


def test_weiss_half_plane(grid128):
    u = sample(x2_plus, grid128)
    for r in np.linspace(0.2, 0.8, 7):
        assert weiss_energy(u, (0.0, 0.0), r) == pytest.approx(math.pi / 2, abs=20 * grid128.h)


def test_weiss_zero_and_constant(grid128):
    assert weiss_energy(sample(0.0, grid128), (0.0, 0.0), 0.5) == 0.0
    c = 0.3
    for r in (0.3, 0.6):
        W = weiss_energy(sample(c, grid128), (0.0, 0.0), r)
        assert W == pytest.approx(math.pi - 2 * math.pi * c**2 / r**2, abs=20 * grid128.h)


@pytest.mark.parametrize("gamma", [0.5, 1.5])
def test_weiss_constant_on_homogeneous_fields(grid128, gamma):
    u = fixture("wedge", grid128, gamma=gamma)
    prof = weiss_profile(u, (0.0, 0.0), np.linspace(0.2, 0.8, 7))
    assert max(prof.values) - min(prof.values) <= 20 * grid128.h


def test_weiss_monotone_along_solver_outputs(solver_outputs):
    for name, u in solver_outputs.items():
        fb = extract_free_boundary(u, Ball.unit(2, 0.15))
        for x0 in fb.points[:: max(1, len(fb) // 4)]:
            prof = weiss_profile(u, x0, np.linspace(0.1, 0.8, 8))
            assert prof.monotone(20 * u.h), (name, x0, prof.values)


def test_weiss_profile_requires_increasing_radii():
    with pytest.raises(ValidationError):
        WeissProfile((0.0, 0.0), [0.5, 0.2], [1.0, 1.0])


# -- blow-ups ---------------------------------------------------------------------------------------


def test_blowup_half_plane(grid128):
    steps = blowup_sequence(sample(x2_plus, grid128), (0.0, 0.0), [0.5, 0.25, 0.125])
    for s in steps:
        assert s.fit_error <= 10 * grid128.h
        assert np.allclose(s.direction, (0.0, 1.0), atol=1e-3)


def test_blowup_exterior_radial():
    h = 1 / 256
    r0 = 0.25
    u = fixture("exterior_radial", box_grid(1.0, h), r0=r0)
    radii = [0.4, 0.2, 0.1]
    steps = blowup_sequence(u, (r0, 0.0), radii)
    errs = [s.fit_error for s in steps]
    for r, e in zip(radii, errs):
        assert e <= r / r0 + 10 * h
    assert errs[0] >= errs[1] >= errs[2]


def test_blowup_solver_output(half_plane_min):
    u = half_plane_min.u
    fb = extract_free_boundary(u, Ball.unit(2, 0.1))
    steps = blowup_sequence(u, fb.points[0], [0.5, 0.25, 0.125])
    errs = [s.fit_error for s in steps]
    assert all(b <= a + 2 * 10 * u.h for a, b in zip(errs, errs[1:]))


def test_blowup_requires_free_boundary_and_order(grid128):
    u = sample(x2_plus, grid128)
    with pytest.raises(PreconditionError):
        blowup_sequence(u, (0.0, 0.5), [0.2])
    with pytest.raises(ValidationError):
        blowup_sequence(u, (0.0, 0.0), [0.1, 0.2])
    with pytest.raises(DomainError):
        blowup_sequence(u, (0.0, 0.0), [4 * grid128.h])
