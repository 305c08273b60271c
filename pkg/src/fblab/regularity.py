"""Gradient averages, the dichotomy step, Campanato traces, Lipschitz certificates,
Harnack gaps, non-degeneracy, the Weiss energy and blow-up sequences.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree

from .elliptic import DirichletForm, default_tol, harmonic_replacement
from .energy import rescale
from .errors import ClaimFailure, DomainError, NotApplicable, PreconditionError, ValidationError
from .flatness import FreeBoundary, best_direction, extract_free_boundary, fb_tolerance
from .lattice import (
    Ball,
    GridFunction,
    cell_grad_sq,
    cell_gradient,
    cell_gradient_norm,
    cell_mask,
    cell_measure,
    dirichlet_energy,
    free_nodes,
    interpolate,
    node_mask,
    positivity_measure,
    require_inside,
)

MESH_FLOOR = 16


def average_gradient(u: GridFunction, ball: Ball) -> float:
    """Root-mean-square gradient ``(mean_B |grad u|^2)^(1/2)``."""
    area = cell_measure(u.grid, ball)
    if area == 0:
        raise DomainError("ball contains no cells")
    return math.sqrt(dirichlet_energy(u, ball) / area)


def mean_gradient(u: GridFunction, ball: Ball) -> NDArray[np.float64]:
    """Average of the cell gradient vectors over the ball."""
    cells = cell_mask(u.grid, ball)
    g = cell_gradient(u)[:, cells]
    return g.mean(axis=1)


def gradient_deviation(u: GridFunction, ball: Ball, q: Sequence[float]) -> float:
    """``(mean_B |grad u - q|^2)^(1/2)``."""
    q = np.asarray(q, dtype=float)
    lin = np.tensordot(q, u.grid.nodes, axes=(0, 0))
    w = GridFunction(u.grid, u.values - lin, "signed")
    return math.sqrt(dirichlet_energy(w, ball) / cell_measure(u.grid, ball))


def center_gradient(v: GridFunction, point: Sequence[float]) -> NDArray[np.float64]:
    """Central-difference gradient at ``point`` (interpolated)."""
    p = np.asarray(point, dtype=float)
    h = v.h
    out = np.empty(v.dim)
    for d in range(v.dim):
        e = np.zeros(v.dim)
        e[d] = h
        out[d] = (interpolate(v, p + e) - interpolate(v, p - e)) / (2 * h)
    return out


# -- dichotomy -------------------------------------------------------------------------------


@dataclass(frozen=True)
class DichotomyOutcome:
    variant: str  # "Decay" or "GradientFlat"
    a: float
    a_eta: float
    q: tuple[float, ...] | None = None
    deviation: float | None = None
    c0: float | None = None

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "a": self.a,
            "a_eta": self.a_eta,
            "q": None if self.q is None else list(self.q),
            "deviation": self.deviation,
            "c0": self.c0,
        }


def dichotomy_step(
    u: GridFunction,
    eps: float,
    eta: float = 1 / 8,
    M: float = 10.0,
    ball: Ball | None = None,
) -> DichotomyOutcome:
    """Either the average gradient halves from ``B_1`` to ``B_eta``, or ``u`` is gradient-flat.

    ``q`` is the gradient of the harmonic replacement at the center.  Every
    returned inequality is recomputed from the grid values before returning.
    """
    ball = ball or Ball.unit(u.dim)
    a = average_gradient(u, ball)
    if a < M:
        raise NotApplicable("a >= M", f"average gradient {a:.4g} is below M={M}")
    inner = ball.scaled(eta)
    a_eta = average_gradient(u, inner)
    if a_eta <= a / 2:
        return DichotomyOutcome("Decay", a, a_eta)
    w, _ = harmonic_replacement(u.as_signed(), ball)
    q = center_gradient(w, ball.center)
    dev = gradient_deviation(u, inner, q)
    qn = float(np.linalg.norm(q))
    if dev > eps * a:
        raise ClaimFailure(f"neither alternative holds: a(eta)={a_eta:.4g} > a/2 and deviation {dev:.4g} > eps*a={eps * a:.4g}")
    if not qn > a / 4:
        raise ClaimFailure(f"slope window violated: |q|={qn:.4g} <= a/4={a / 4:.4g}")
    return DichotomyOutcome("GradientFlat", a, a_eta, tuple(float(c) for c in q), dev, qn / a)


# -- Campanato iteration ----------------------------------------------------------------------


@dataclass
class CampanatoTrace:
    radii: list[float]
    slopes: list[tuple[float, ...]]
    deviations: list[float]
    bounds: list[float]
    increments: list[float]
    exponent: float
    verified: bool
    a: float

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scale", "deviation", "bound"] + [f"q{i + 1}" for i in range(len(self.slopes[0]))])
            for r, d, b, q in zip(self.radii, self.deviations, self.bounds, self.slopes):
                w.writerow([repr(r), repr(d), repr(b)] + [repr(v) for v in q])


def campanato_iterate(
    u: GridFunction,
    q0: Sequence[float] | None,
    alpha: float,
    rho: float,
    eps: float,
    center: Sequence[float] | None = None,
    radius: float = 1.0,
    gate: str = "slope",
    c0: float = 4.0,
    c1: float = 0.1,
) -> CampanatoTrace:
    """Best-fit slopes and deviations on ``B_{radius rho^k}`` down to ``16h``.

    ``gate="slope"`` requires the initial deviation from ``q0`` to be at most
    ``eps*a`` with ``a/4 < |q0| <= c0*a``; ``gate="average"`` requires
    ``mean_B u >= c1*a`` instead.  The trace is verified when every
    ``deviation_k <= eps * (r_k/radius)^alpha * a``.
    """
    if not 0 < rho < 1:
        raise ValidationError("rho must lie in (0, 1)", field="campanato.rho")
    n = u.dim
    c = (0.0,) * n if center is None else tuple(float(x) for x in center)
    B = Ball(c, radius)
    a = average_gradient(u, B)
    if gate == "slope":
        if q0 is None:
            raise PreconditionError("slope gate", "q0 is required")
        q0 = np.asarray(q0, dtype=float)
        qn = float(np.linalg.norm(q0))
        if not (a / 4 < qn <= c0 * a):
            raise PreconditionError("slope gate", f"|q0|={qn:.4g} outside (a/4, {c0}a] with a={a:.4g}")
        d0 = gradient_deviation(u, B, q0)
        if d0 > eps * a:
            raise PreconditionError("slope gate", f"initial deviation {d0:.4g} exceeds eps*a={eps * a:.4g}")
    elif gate == "average":
        mask = node_mask(u.grid, B)
        if float(u.values[mask].mean()) < c1 * a:
            raise PreconditionError("average gate", f"mean of u below {c1}*a")
    else:
        raise ValidationError(f"unknown gate {gate!r}", field="campanato.gate")

    radii, slopes, devs, bounds = [], [], [], []
    r = radius
    while r >= MESH_FLOOR * u.h - 1e-12:
        Br = Ball(c, r)
        q = mean_gradient(u, Br)
        radii.append(r)
        slopes.append(tuple(float(x) for x in q))
        devs.append(gradient_deviation(u, Br, q))
        bounds.append(eps * (r / radius) ** alpha * a)
        r *= rho
    inc = [float(np.linalg.norm(np.subtract(slopes[k + 1], slopes[k]))) for k in range(len(slopes) - 1)]
    d = np.asarray(devs)
    ok = d > 1e-12
    exponent = float(np.polyfit(np.log(np.asarray(radii)[ok]), np.log(d[ok]), 1)[0]) if ok.sum() >= 2 else math.nan
    verified = bool(np.all(d <= np.asarray(bounds)))
    return CampanatoTrace(radii, slopes, devs, bounds, inc, exponent, verified, a)


# -- Lipschitz certificate ---------------------------------------------------------------------


@dataclass
class LipschitzCertificate:
    value: float
    a1: float
    constant: float
    certified: bool
    cascade: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"value": self.value, "a1": self.a1, "constant": self.constant, "certified": self.certified, "cascade": self.cascade}


def lipschitz_certificate(
    u: GridFunction,
    center: Sequence[float] | None = None,
    radius: float = 1.0,
    eta: float = 1 / 8,
    M: float = 10.0,
    eps: float = 0.5,
    c_max: float = 4.0,
) -> LipschitzCertificate:
    """Run the cascade ``a(eta^k) <= C(eta) M + 2^-k a(1)`` and return ``sup_{B_1/2} |grad u|``.

    ``C(eta) = 2 eta^(-n/2)``.  A scale violating the cascade is handed to
    :func:`dichotomy_step` on the parent ball; the certificate stays valid if
    the dichotomy resolves it.  The returned value is asserted to be at most
    ``c_max (1 + a(1))``.
    """
    n = u.dim
    c = (0.0,) * n if center is None else tuple(float(x) for x in center)
    B = Ball(c, radius)
    require_inside(u.grid, B)
    Ceta = 2 * eta ** (-n / 2)
    a1 = average_gradient(u, B)
    log: list[dict] = []
    k = 0
    r = radius
    resolved = True
    while r >= MESH_FLOOR * u.h - 1e-12:
        ak = average_gradient(u, Ball(c, r))
        bound = Ceta * M + 2.0 ** (-k) * a1
        row = {"k": k, "scale": r, "a": ak, "bound": bound, "ok": ak <= bound, "C_eta": Ceta}
        if ak > bound:
            parent = Ball(c, r / eta)
            try:
                out = dichotomy_step(u, eps, eta, M, parent)
                row["dichotomy"] = out.variant
            except (NotApplicable, ClaimFailure) as exc:
                row["dichotomy"] = type(exc).__name__
                resolved = False
        log.append(row)
        r *= eta
        k += 1
    certified = resolved and len(log) > 0
    cells = cell_mask(u.grid, B.scaled(0.5))
    value = float(cell_gradient_norm(u)[cells].max()) if cells.any() else 0.0
    constant = value / (1.0 + a1)
    if certified and constant > c_max:
        raise ClaimFailure(f"sup |grad u| = {value:.4g} exceeds {c_max}(1 + a(1))")
    return LipschitzCertificate(value, a1, constant, certified, log)


def gradient_near_free_boundary(
    u: GridFunction, distance: float = 0.1, domain: Ball | None = None, fb: FreeBoundary | None = None
) -> float:
    """Largest cell gradient among cells whose center is within ``distance`` of the free boundary."""
    fb = fb if fb is not None else extract_free_boundary(u, domain)
    if len(fb) == 0:
        raise PreconditionError("free boundary", "no free-boundary points")
    centers = u.grid.cell_centers.reshape(u.dim, -1).T
    cells = cell_mask(u.grid, domain).ravel()
    d, _ = cKDTree(fb.points).query(centers[cells], distance_upper_bound=distance)
    near = np.flatnonzero(cells)[d <= distance]
    g = cell_gradient_norm(u).ravel()[near]
    return float(g.max()) if g.size else 0.0


# -- Harnack gap and non-degeneracy --------------------------------------------------------------


def discrete_laplacian_residual(w: GridFunction, ball: Ball) -> float:
    """Scaled max-norm of the 5/7-point Laplacian over the free nodes of the ball."""
    cells = cell_mask(w.grid, ball)
    form = DirichletForm(w.grid, cells)
    free = free_nodes(cells).ravel()
    lap = form.apply(w.values)[free]
    norm = w.h**2 * form.diag[free] / (2 * w.dim)
    return float(np.max(np.abs(lap) / norm)) if lap.size else 0.0


def harnack_gap(
    u: GridFunction,
    w: GridFunction,
    ball: Ball,
    mu: float,
    sigma: float | None = None,
    above: bool = False,
    tol: float | None = None,
) -> float:
    """``min_{B_1/2} (u - w)/mu`` (or ``(w - u)/mu`` when ``above``), after checking each hypothesis."""
    require_inside(u.grid, ball)
    n = u.dim
    inside = node_mask(u.grid, ball)
    if np.any(u.values[inside] <= 0):
        raise PreconditionError("positivity", "ball is not contained in {u > 0}")
    tol = 10 * default_tol(u.h) if tol is None else tol
    res = discrete_laplacian_residual(w, ball)
    if res > tol:
        raise PreconditionError("harmonic", f"w has Laplacian residual {res:.3g} > {tol:.3g}")
    diff = (w.values - u.values) if above else (u.values - w.values)
    if np.any(diff[inside] < -1e-12):
        raise PreconditionError("ordering", "u >= w fails in the ball" if not above else "w >= u fails in the ball")
    gap0 = float(interpolate(GridFunction(u.grid, diff, "signed"), ball.center))
    if gap0 < mu - 1e-12:
        raise PreconditionError("center gap", f"gap {gap0:.4g} at the center is below mu={mu}")
    if sigma is not None and sigma > mu ** (n + 3):
        raise PreconditionError("sigma", f"sigma={sigma} exceeds mu^(n+3)")
    half = node_mask(u.grid, ball.scaled(0.5))
    return float(np.min(diff[half]) / mu)


def weak_nondegeneracy(u: GridFunction, ball: Ball, sigma: float | None = None) -> float:
    """``u`` at the center of a ball contained in the positivity set."""
    require_inside(u.grid, ball)
    inside = node_mask(u.grid, ball)
    if np.any(u.values[inside] <= 0):
        raise PreconditionError("positivity", "ball is not contained in {u > 0}")
    return float(interpolate(u, ball.center))


def _ball_max(u: GridFunction, center: NDArray, r: float) -> float:
    mask = node_mask(u.grid, Ball(tuple(center), r))
    best = float(u.values[mask].max()) if mask.any() else 0.0
    m = max(64, int(math.ceil(2 * math.pi * r / u.h)) * 2)
    if u.dim == 2:
        th = 2 * np.pi * np.arange(m) / m
        pts = center[:, None] + r * np.stack([np.cos(th), np.sin(th)])
        vals = interpolate(u, pts)
        k = int(np.argmax(vals))

        def neg(t: float) -> float:
            return -float(interpolate(u, center + r * np.array([math.cos(t), math.sin(t)])))

        step = 2 * np.pi / m
        res = minimize_scalar(neg, bounds=(th[k] - step, th[k] + step), method="bounded", options={"xatol": 1e-10})
        return max(best, float(vals[k]), -float(res.fun))
    k = np.arange(m * m // 4) + 0.5
    z = 1 - 2 * k / k.size
    phi = np.pi * (1 + 5**0.5) * k
    s = np.sqrt(1 - z * z)
    pts = center[:, None] + r * np.stack([s * np.cos(phi), s * np.sin(phi), z])
    return max(best, float(interpolate(u, pts).max()))


def strong_nondegeneracy(
    u: GridFunction, x0: Sequence[float], radii: Sequence[float], fb: FreeBoundary | None = None
) -> list[tuple[float, float]]:
    """``(r, max_{B_r(x0)} u / r)`` for each radius; ``x0`` must lie on the extracted free boundary."""
    x0 = np.asarray(x0, dtype=float)
    fb = fb if fb is not None else extract_free_boundary(u)
    if len(fb) == 0 or fb.distance_to(x0) > fb_tolerance(u):
        raise PreconditionError("free boundary", f"{tuple(x0)} is not on the extracted free boundary")
    out = []
    for r in radii:
        if r < 8 * u.h:
            raise DomainError(f"radius {r} is below 8h")
        require_inside(u.grid, Ball(tuple(x0), r))
        out.append((float(r), _ball_max(u, x0, r) / r))
    return out


# -- Weiss energy and blow-ups --------------------------------------------------------------------


def sphere_quadrature(dim: int, r: float, h: float) -> tuple[NDArray, NDArray]:
    """Nodes (unit vectors) and weights for ``int_{dB_r}``: trapezoid in angle, Gauss in ``z`` for 3D."""
    m = max(64, 4 * int(math.ceil(2 * math.pi * r / h)))
    th = 2 * np.pi * np.arange(m) / m
    if dim == 2:
        return np.stack([np.cos(th), np.sin(th)]), np.full(m, 2 * np.pi * r / m)
    zq, wq = np.polynomial.legendre.leggauss(max(16, m // 2))
    s = np.sqrt(1 - zq**2)
    pts = np.stack(
        [np.outer(s, np.cos(th)).ravel(), np.outer(s, np.sin(th)).ravel(), np.repeat(zq, m)]
    )
    w = np.outer(wq, np.full(m, 2 * np.pi / m)).ravel() * r**2
    return pts, w


def weiss_energy(u: GridFunction, x0: Sequence[float], r: float) -> float:
    """``r^-n int_{B_r}(|grad u|^2 + chi_{u>0}) - r^(-n-1) int_{dB_r} u^2``."""
    c = tuple(float(x) for x in x0)
    B = Ball(c, r)
    require_inside(u.grid, B)
    n = u.dim
    bulk = dirichlet_energy(u, B) + positivity_measure(u, B)
    dirs, w = sphere_quadrature(n, r, u.h)
    pts = np.asarray(c)[:, None] + r * dirs
    boundary = float(np.dot(w, interpolate(u, pts) ** 2))
    return bulk / r**n - boundary / r ** (n + 1)


@dataclass
class WeissProfile:
    center: tuple[float, ...]
    radii: list[float]
    values: list[float]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ValidationError("radii must be strictly increasing", field="weiss.radii")

    def max_decrease(self) -> float:
        """Largest drop ``W(r_i) - W(r_j)`` over ``r_i < r_j`` (0 when monotone)."""
        v = np.asarray(self.values)
        running = np.maximum.accumulate(v)
        return float(np.max(running - v)) if v.size else 0.0

    def monotone(self, slack: float) -> bool:
        return self.max_decrease() <= slack

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scale", "value"])
            for r, v in zip(self.radii, self.values):
                w.writerow([repr(r), repr(v)])


def weiss_profile(u: GridFunction, x0: Sequence[float], radii: Sequence[float]) -> WeissProfile:
    return WeissProfile(tuple(float(x) for x in x0), [float(r) for r in radii], [weiss_energy(u, x0, r) for r in radii])


@dataclass
class BlowupStep:
    radius: float
    u: GridFunction
    fit_error: float
    direction: tuple[float, ...]
    fb_distance: float


def _fb_hyperplane_distance(v: GridFunction, nu: NDArray, window: float = 0.5) -> float:
    """Two-sided Hausdorff distance in ``B_window`` between the free boundary and ``{x.nu = 0}``."""
    fb = extract_free_boundary(v, Ball((0.0,) * v.dim, window))
    if len(fb) == 0:
        return math.inf
    one = float(np.max(np.abs(fb.points @ nu)))
    # sample the hyperplane inside the window
    basis = np.linalg.svd(nu[None, :])[2][1:]
    t = np.arange(-window, window + v.h / 2, v.h)
    grids = np.meshgrid(*([t] * (v.dim - 1)), indexing="ij")
    coef = np.stack([g.ravel() for g in grids], axis=1)
    plane = coef @ basis
    plane = plane[np.linalg.norm(plane, axis=1) < window - 2 * v.h]
    two = float(cKDTree(fb.points).query(plane)[0].max()) if len(plane) else 0.0
    return max(one, two)


def blowup_sequence(u: GridFunction, x0: Sequence[float], radii: Sequence[float]) -> list[BlowupStep]:
    """Rescalings ``u(x0 + r x)/r`` on ``B_1`` with the best half-plane fit for each ``r``."""
    x0 = np.asarray(x0, dtype=float)
    fb = extract_free_boundary(u)
    if fb.distance_to(x0) > fb_tolerance(u):
        raise PreconditionError("free boundary", f"{tuple(x0)} is not on the extracted free boundary")
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValidationError("radii must be decreasing", field="blowup.radii")
    out = []
    for r in radii:
        if r < MESH_FLOOR * u.h - 1e-12:
            raise DomainError(f"radius {r} is below the resolvable 16h")
        v = rescale(u, r, x0).u
        cert = best_direction(v, Ball.unit(u.dim))
        nu = np.asarray(cert.direction)
        out.append(BlowupStep(float(r), v, cert.deviation, cert.direction, _fb_hyperplane_distance(v, nu)))
    return out
