"""Quadratic barriers, touching, and the exclusion and comparison tests built on them.

A quadratic ``P(x) = c + b.x + x^T A x / 2`` touches ``u`` from below at the
shift ``t* = min (u - P)`` over a region; the contact set is every node within
``10h`` of that minimum.  The exclusion tests ask where the touching translate
``P + t*`` makes contact: a barrier satisfying the hypotheses below may only
touch an almost minimizer away from ``B_1/2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .energy import rescale
from .errors import ClaimFailure, PreconditionError, ValidationError
from .flatness import best_direction
from .lattice import Ball, GridFunction, interpolate, node_mask, require_inside
from .regularity import harnack_gap

CONSISTENT = "consistent"
VIOLATION = "violation"
CONTACT_SLACK = 10.0

Region = Union[Ball, NDArray[np.bool_], Callable[[NDArray[np.float64]], NDArray[np.bool_]]]


@dataclass(frozen=True)
class QuadraticPolynomial:
    c: float
    b: tuple[float, ...]
    A: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float).ravel()
        A = np.asarray(self.A, dtype=float)
        if A.shape != (b.size, b.size):
            raise ValidationError(f"A has shape {A.shape}, expected {(b.size, b.size)}", field="P.A")
        if not np.allclose(A, A.T, atol=1e-12, rtol=0):
            raise ValidationError("A must be symmetric", field="P.A")
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "b", tuple(float(x) for x in b))
        object.__setattr__(self, "A", tuple(tuple(float(x) for x in row) for row in A))

    @classmethod
    def from_arrays(cls, c: float, b: Sequence[float], A: NDArray | None = None) -> "QuadraticPolynomial":
        b = np.asarray(b, dtype=float)
        A = np.zeros((b.size, b.size)) if A is None else np.asarray(A, dtype=float)
        return cls(c, tuple(b), tuple(map(tuple, A)))

    @property
    def dim(self) -> int:
        return len(self.b)

    @property
    def hessian(self) -> NDArray[np.float64]:
        return np.asarray(self.A)

    @property
    def norm(self) -> float:
        """Operator norm ``||D^2 P||``."""
        return float(np.max(np.abs(np.linalg.eigvalsh(self.hessian))))

    @property
    def laplacian(self) -> float:
        return float(np.trace(self.hessian))

    def __call__(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=float)
        b = np.asarray(self.b).reshape((-1,) + (1,) * (x.ndim - 1))
        Ax = np.tensordot(self.hessian, x, axes=(1, 0))
        return self.c + np.sum(b * x, axis=0) + 0.5 * np.sum(x * Ax, axis=0)

    def gradient(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=float)
        b = np.asarray(self.b).reshape((-1,) + (1,) * (x.ndim - 1))
        return b + np.tensordot(self.hessian, x, axes=(1, 0))

    def shifted(self, s: float) -> "QuadraticPolynomial":
        return QuadraticPolynomial(self.c + s, self.b, self.A)

    def scaled(self, center: Sequence[float], r: float) -> "QuadraticPolynomial":
        """``P(center + r y) / r`` as a polynomial in ``y``."""
        z = np.asarray(center, dtype=float)
        A = self.hessian
        b = np.asarray(self.b)
        c = float(self(z.reshape(-1, 1))[0])
        return QuadraticPolynomial.from_arrays(c / r, b + A @ z, r * A)

    def to_json(self) -> dict:
        return {"c": self.c, "b": list(self.b), "A": [list(r) for r in self.A]}


def make_barrier(P: QuadraticPolynomial, mu: float, side: str = "below") -> QuadraticPolynomial:
    """``P + (mu/4n)(1 - |x|^2)`` for ``side="below"``, ``P - (mu/4n)(1 - |x|^2)`` for ``"above"``."""
    if not mu > 0:
        raise ValidationError(f"mu must be positive, got {mu}", field="barrier.mu")
    if side not in ("below", "above"):
        raise ValidationError(f"side must be 'below' or 'above', got {side!r}", field="barrier.side")
    n = P.dim
    k = mu / (4 * n)
    sgn = 1.0 if side == "below" else -1.0
    A = P.hessian - sgn * 2 * k * np.eye(n)
    return QuadraticPolynomial.from_arrays(P.c + sgn * k, P.b, A)


# -- touching ----------------------------------------------------------------------------------


@dataclass
class TouchReport:
    shift: float
    contact_points: list[tuple[float, ...]]
    location: str
    gradient_ok: bool
    side: str = "below"
    argmin: tuple[float, ...] = ()

    def to_row(self) -> dict:
        return {"t_star": self.shift, "location": self.location, "contacts": len(self.contact_points), "gradient_ok": self.gradient_ok}


def _region_mask(u: GridFunction, region: Region) -> NDArray[np.bool_]:
    if isinstance(region, Ball):
        require_inside(u.grid, region)
        return node_mask(u.grid, region)
    if callable(region):
        return np.asarray(region(u.grid.nodes), dtype=bool) & np.ones(u.grid.shape, dtype=bool)
    mask = np.asarray(region, dtype=bool)
    if mask.shape != u.grid.shape:
        raise ValidationError("region mask does not match the grid", field="region")
    return mask


def _classify(u: GridFunction, region: NDArray[np.bool_], contact: NDArray[np.bool_], inner: Ball) -> str:
    """``interior_B_half`` when every contact lies in ``inner``; ``region_boundary`` if any
    contact is within one node of the region's edge; ``annulus`` otherwise."""
    if not contact.any():
        return "none"
    inside_inner = node_mask(u.grid, inner, closed=False)
    if np.all(inside_inner[contact]):
        return "interior_B_half"
    fp = ndimage.generate_binary_structure(u.dim, 1)
    edge = region & ~ndimage.binary_erosion(region, fp, border_value=0)
    if np.any(edge[contact]):
        return "region_boundary"
    return "annulus"


def _gradient_condition(u: GridFunction, P: QuadraticPolynomial, where: NDArray[np.bool_], mu: float, above: bool = False) -> bool:
    """``u > 0`` or the gradient bound, checked at the zero nodes of ``where`` where ``P > -10h``."""
    zero = where & (u.values <= 0) & (P(u.grid.nodes) > -CONTACT_SLACK * u.h)
    if not zero.any():
        return True
    g = np.linalg.norm(P.gradient(u.grid.nodes[:, zero]), axis=0)
    return bool(np.all(g <= 1 - mu + 1e-12)) if above else bool(np.all(g >= 1 + mu - 1e-12))


def touch_from_below(u: GridFunction, P: QuadraticPolynomial, region: Region, inner: Ball | None = None, mu: float = 0.0) -> TouchReport:
    mask = _region_mask(u, region)
    if not mask.any():
        raise ValidationError("touching region is empty", field="region")
    # the constant term is peeled off so a vertical shift moves t by exactly one rounding
    diff = u.values - P.shifted(-P.c)(u.grid.nodes)
    m = float(diff[mask].min())
    t = m - P.c
    diff = diff - P.c
    contact = mask & (diff <= t + CONTACT_SLACK * u.h)
    inner = inner or Ball((0.0,) * u.dim, 0.5)
    loc = _classify(u, mask, contact, inner)
    k = np.flatnonzero(np.where(mask, diff, np.inf).ravel() == t)[0]
    pts = u.grid.nodes.reshape(u.dim, -1)
    argmin = tuple(float(v) for v in pts[:, k])
    grad_ok = _gradient_condition(u, P.shifted(t), contact, mu)
    return TouchReport(t, [tuple(float(v) for v in p) for p in pts[:, contact.ravel()].T], loc, grad_ok, "below", argmin)


def touch_from_above(u: GridFunction, P: QuadraticPolynomial, region: Region, inner: Ball | None = None, mu: float = 0.0) -> TouchReport:
    """Smallest ``t`` with ``(P + t)^+ >= u``; contact limited to the closures of ``{P + t > 0}`` and ``{u > 0}``."""
    mask = _region_mask(u, region)
    if not mask.any():
        raise ValidationError("touching region is empty", field="region")
    pos = u.values > 0
    if not np.any(mask & pos):
        raise PreconditionError("positivity", "u vanishes on the touching region")
    Px = P(u.grid.nodes)
    diff = u.values - Px
    t = float(diff[mask & pos].max())
    fp = ndimage.generate_binary_structure(u.dim, 1)
    closure_u = ndimage.binary_dilation(pos, fp)
    near = np.abs(np.maximum(Px + t, 0.0) - u.values) <= CONTACT_SLACK * u.h
    contact = mask & closure_u & (Px + t >= -CONTACT_SLACK * u.h) & near
    inner = inner or Ball((0.0,) * u.dim, 0.5)
    loc = _classify(u, mask, contact, inner)
    k = np.flatnonzero(np.where(mask & pos, diff, -np.inf).ravel() == t)[0]
    pts = u.grid.nodes.reshape(u.dim, -1)
    argmin = tuple(float(v) for v in pts[:, k])
    grad_ok = _gradient_condition(u, P.shifted(t), contact, mu, above=True)
    return TouchReport(-t, [tuple(float(v) for v in p) for p in pts[:, contact.ravel()].T], loc, grad_ok, "above", argmin)


# -- exclusion tests -----------------------------------------------------------------------------


@dataclass
class ExclusionResult:
    verdict: str
    touch: TouchReport
    mu: float
    sigma: float | None

    @property
    def consistent(self) -> bool:
        return self.verdict == CONSISTENT


def _exclusion(u: GridFunction, P: QuadraticPolynomial, mu: float, sigma: float | None, ball: Ball, above: bool, translate: bool) -> ExclusionResult:
    n = u.dim
    require_inside(u.grid, ball)
    if not mu > 0:
        raise PreconditionError("mu", "mu must be positive")
    if P.norm > 1 + 1e-12:
        raise PreconditionError("hessian bound", f"||D^2 P|| = {P.norm:.4g} > 1")
    if above and P.laplacian > -mu + 1e-12:
        raise PreconditionError("laplacian", f"Delta P = {P.laplacian:.4g} > -mu")
    if not above and P.laplacian < mu - 1e-12:
        raise PreconditionError("laplacian", f"Delta P = {P.laplacian:.4g} < mu")
    if sigma is not None and sigma > mu ** (n + 3):
        raise PreconditionError("sigma", f"sigma={sigma:.3g} exceeds mu^(n+3)={mu ** (n + 3):.3g}")
    inner = Ball(ball.center, 0.5 * ball.radius)
    region = node_mask(u.grid, ball)
    touch = (touch_from_above if above else touch_from_below)(u, P, ball, inner, mu)
    Q = P.shifted(touch.shift if not above else -touch.shift) if translate else P
    shift = 0.0 if translate else touch.shift
    if not _gradient_condition(u, Q, region, mu, above):
        name = "|grad P| <= 1 - mu" if above else "|grad P| >= 1 + mu"
        raise PreconditionError("gradient condition", f"u vanishes where P > 0 and {name} fails")
    if abs(shift) > CONTACT_SLACK * u.h or touch.location != "interior_B_half":
        verdict = CONSISTENT
    else:
        verdict = VIOLATION
    return ExclusionResult(verdict, touch, mu, sigma)


def subsolution_exclusion_test(
    u: GridFunction, P: QuadraticPolynomial, mu: float, sigma: float | None = None, ball: Ball | None = None, translate: bool = True
) -> ExclusionResult:
    """A barrier with ``||D^2P|| <= 1``, ``Delta P >= mu`` and ``|grad P| >= 1 + mu`` on ``{u = 0}``
    must not touch ``u`` from below inside the half ball.

    With ``translate=True`` the test is applied to the touching translate
    ``P + t*`` (the hypotheses are shift invariant); otherwise ``P`` itself
    must be within ``10h`` of touching for a violation.
    """
    return _exclusion(u, P, mu, sigma, ball or Ball.unit(u.dim), False, translate)


def supersolution_exclusion_test(
    u: GridFunction, P: QuadraticPolynomial, mu: float, sigma: float | None = None, ball: Ball | None = None, translate: bool = True
) -> ExclusionResult:
    """Mirror image: ``Delta P <= -mu`` and ``|grad P| <= 1 - mu``; ``P^+`` must not touch ``u`` from above inside the half ball."""
    return _exclusion(u, P, mu, sigma, ball or Ball.unit(u.dim), True, translate)


# -- comparison ----------------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    holds: bool
    min_gap: float
    location: tuple[float, ...]


def comparison_apply(
    u: GridFunction,
    P: QuadraticPolynomial,
    region: Region,
    delta: float,
    mu: float,
    sigma: float | None = None,
    c_scale: float = 1.0,
) -> ComparisonReport:
    """If ``u >= P`` on the ``delta``-collar of ``U`` then ``u >= P - 10h`` on all of ``U``.

    Hypotheses: ``||D^2 P|| <= 1/delta``, ``Delta P >= mu`` (``mu >= 0``),
    ``u > 0`` or ``|grad P| >= 1 + mu`` on ``U``, and when ``sigma`` is given
    ``mu^(n+3) >= c_scale * sigma``.
    """
    U = _region_mask(u, region)
    if not U.any():
        raise ValidationError("comparison region is empty", field="region")
    n = u.dim
    if mu < 0:
        raise PreconditionError("mu", "mu must be nonnegative")
    if P.norm > 1 / delta + 1e-12:
        raise PreconditionError("hessian bound", f"||D^2 P|| = {P.norm:.4g} > 1/delta")
    if P.laplacian < mu - 1e-12:
        raise PreconditionError("laplacian", f"Delta P = {P.laplacian:.4g} < mu")
    if sigma is not None and mu ** (n + 3) < c_scale * sigma:
        raise PreconditionError("sigma", "mu^(n+3) < C sigma")
    if not _gradient_condition(u, P, U, mu):
        raise PreconditionError("gradient condition", "u vanishes where P > 0 and |grad P| < 1 + mu")
    depth = ndimage.distance_transform_edt(U) * u.h
    collar = U & (depth <= delta)
    diff = u.values - P(u.grid.nodes)
    pts = u.grid.nodes.reshape(n, -1)
    if collar.any() and diff[collar].min() < -1e-12:
        k = int(np.argmin(np.where(collar, diff, np.inf).ravel()))
        raise PreconditionError("collar", f"u < P by {-diff.ravel()[k]:.3g} at collar node {tuple(float(v) for v in pts[:, k])}")
    k = int(np.argmin(np.where(U, diff, np.inf).ravel()))
    gap = float(diff.ravel()[k])
    holds = gap >= -CONTACT_SLACK * u.h
    report = ComparisonReport(holds, gap, tuple(float(v) for v in pts[:, k]))
    if not holds:
        raise ClaimFailure(f"comparison fails: u - P = {gap:.4g} at {report.location}")
    return report


# -- (P1) and (P2) ------------------------------------------------------------------------------


@dataclass
class P1Report:
    holds: bool
    c: float
    c_intermediate: float
    harnack_ratio: float
    cylinder: str
    log: dict = field(default_factory=dict)


def _lift_constant(u: GridFunction, a: float, scale: float, region: NDArray[np.bool_], upper: float = 4.0) -> float:
    """Largest ``c`` with ``u >= (x_n + a + c*scale)^+`` on ``region``, by bisection."""
    xn = u.grid.nodes[-1][region]
    uv = u.values[region]

    def ok(c: float) -> bool:
        lift = xn + a + c * scale
        return bool(np.all(uv >= np.maximum(lift, 0.0) - 1e-12))

    if not ok(0.0):
        return 0.0
    lo, hi = 0.0, upper
    if ok(hi):
        return hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def p1_check(
    u: GridFunction,
    eps: float,
    p_delta: float,
    gamma: float,
    a: float = 0.0,
    y: Sequence[float] | None = None,
    c0: float | None = None,
    sigma: float | None = None,
    c_floor: float = 0.0,
    y_gap: float | None = None,
) -> P1Report:
    """Harnack-type lift: ``u >= (x_n + a)^+`` in ``B_1`` and ``u(y) >= (y_n + a)^+ + gamma eps``
    imply ``u >= (x_n + a + c gamma eps)^+`` in ``B_1/2``; ``c`` is measured.

    ``c0`` (default ``1/(8n)``) sets the height of the intermediate region
    ``B_3/4 cap {x_n >= c0}`` and the cylinder ``{|x_n| <= 2 c0, |x'| <= 1/4}``.
    """
    n = u.dim
    c0 = 1.0 / (8 * n) if c0 is None else c0
    y = np.eye(n)[-1] * 0.5 if y is None else np.asarray(y, dtype=float)
    B1 = Ball.unit(n)
    require_inside(u.grid, B1)
    if abs(a) > eps:
        raise PreconditionError("offset", f"|a| = {abs(a)} exceeds eps = {eps}")
    if not p_delta <= gamma <= 1:
        raise PreconditionError("gamma", f"gamma={gamma} outside [p_delta, 1]")
    if sigma is not None and sigma > eps ** (n + 4):
        raise PreconditionError("sigma", f"sigma={sigma:.3g} exceeds eps^(n+4)")
    X = u.grid.nodes
    inB1 = node_mask(u.grid, B1)
    low = np.maximum(X[-1] + a, 0.0)
    if np.any(u.values[inB1] < low[inB1] - 1e-12):
        raise PreconditionError("lower bound", "u >= (x_n + a)^+ fails in B_1")
    ly = y[-1] + a
    if not ly > 0:
        raise PreconditionError("improvement hypothesis", "y must lie in {x_n + a > 0}")
    uy = float(interpolate(u, y))
    gap = gamma * eps if y_gap is None else y_gap
    if uy < ly + gap - 1e-12:
        raise PreconditionError("improvement hypothesis", f"u(y) = {uy:.4g} < l(y) + gap = {ly + gap:.4g}")

    half = node_mask(u.grid, Ball.unit(n, 0.5))
    c = _lift_constant(u, a, gamma * eps, half)

    # intermediate bound on B_3/4 cap {x_n >= c0}, and the Harnack gap around y
    zone = node_mask(u.grid, Ball.unit(n, 0.75)) & (X[-1] >= c0)
    c_mid = float(np.min((u.values - low)[zone]) / (gamma * eps)) if zone.any() else math.nan
    w = GridFunction(u.grid, X[-1] + a, "signed")
    ry = min(ly, 1 - float(np.linalg.norm(y)))
    try:
        ratio = harnack_gap(u, w, Ball(tuple(y), ry), uy - ly)
    except PreconditionError as exc:
        ratio = math.nan
        log_h = str(exc)
    else:
        log_h = "ok"

    cyl_status = "skipped"
    if c_mid > 0:
        cm = min(c_mid, 1.0)
        ge = gamma * eps
        A = cm / 2 * ge * np.diag([-2.0] * (n - 1) + [4.0 * n])
        b = np.zeros(n)
        b[-1] = 1 + cm / 2 * ge
        P = QuadraticPolynomial.from_arrays(a + cm / 2 * ge * c0, b, A)
        xp = np.sqrt(np.sum(X[:-1] ** 2, axis=0))
        cyl = (np.abs(X[-1]) <= 2 * c0) & (xp <= 0.25)
        try:
            comparison_apply(u, P, cyl, delta=u.h * 2, mu=cm * ge / 4)
            cyl_status = "holds"
        except PreconditionError as exc:
            cyl_status = f"not applicable: {exc}"
        except ClaimFailure as exc:
            cyl_status = f"fails: {exc}"
    holds = c > c_floor
    return P1Report(holds, c, c_mid, ratio, cyl_status, {"c0": c0, "y": list(map(float, y)), "harnack": log_h})


@dataclass
class P2Report:
    verdict: str
    sigma_bar: float | None
    mu: float
    exclusion: ExclusionResult


def p2_check(
    u: GridFunction,
    eps: float,
    p_delta: float,
    P: QuadraticPolynomial,
    x0: Sequence[float] | None = None,
    sigma: float | None = None,
    side: str = "below",
) -> P2Report:
    """Rescale ``B_delta(x0)`` to ``B_1`` and run the exclusion test with ``mu = delta^2 eps``."""
    n = u.dim
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    d = p_delta
    above = side == "above"
    if P.norm > eps / d + 1e-12:
        raise PreconditionError("hessian bound", f"||D^2 P|| = {P.norm:.4g} > eps/delta = {eps / d:.4g}")
    if not above and P.laplacian < d * eps - 1e-12:
        raise PreconditionError("laplacian", f"Delta P = {P.laplacian:.4g} < delta eps")
    if above and P.laplacian > -d * eps + 1e-12:
        raise PreconditionError("laplacian", f"Delta P = {P.laplacian:.4g} > -delta eps")
    ball = Ball(tuple(x0), d)
    require_inside(u.grid, ball)
    if not _gradient_condition(u, P, node_mask(u.grid, ball), d * eps, above):
        raise PreconditionError("gradient condition", "u vanishes where P > 0 and the gradient bound fails")
    v = rescale(u, d, x0).u
    Q = P.scaled(x0, d)
    mu = d * d * eps
    sigma_bar = None if sigma is None else d ** (-n) * sigma
    test = supersolution_exclusion_test if above else subsolution_exclusion_test
    res = test(v, Q, mu, sigma_bar)
    return P2Report(res.verdict, sigma_bar, mu, res)


# -- built-in barrier sweep -------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    barrier_id: int
    mu: float
    t_star: float
    location: str
    verdict: str
    side: str


def _rotation(n: int, angle: float) -> NDArray[np.float64]:
    R = np.eye(n)
    c, s = math.cos(angle), math.sin(angle)
    R[0, 0], R[0, -1], R[-1, 0], R[-1, -1] = c, s, -s, c
    return R


def sweep_barriers(n: int, mu: float, nu: Sequence[float], count: int = 10) -> list[tuple[QuadraticPolynomial, str]]:
    """``count`` admissible barriers: half subsolution-type, half supersolution-type.

    Each is ``make_barrier`` applied to a polynomial whose slope along a
    direction near ``nu`` leaves a ``2 mu`` margin in the gradient condition
    after accounting for the Hessian on ``B_1``.
    """
    nu = np.asarray(nu, dtype=float)
    nu = nu / np.linalg.norm(nu)
    angles = [0.0, 0.15, -0.15, 0.3, -0.3]
    out = []
    half = count // 2
    for j in range(count):
        sub = j < half
        ang = angles[(j if sub else j - half) % len(angles)]
        d = _rotation(n, ang) @ nu
        # Hessian eigenvalues: Laplacian >= 3 mu / 2 before the barrier bump, norm <= 1 - mu
        if j % 2 == 0:
            lam = np.full(n, 1.5 * mu / n + 0.05)
        else:
            lam = np.array([-(0.4)] * (n - 1) + [0.4 * (n - 1) + 1.5 * mu + 0.05])
        lam = np.clip(lam, -(1 - mu), 1 - mu)
        H = _rotation(n, 0.4 * j) @ np.diag(lam) @ _rotation(n, 0.4 * j).T
        if not sub:
            H = -H
        norm = float(np.max(np.abs(lam)))
        slope = 1 + 2 * mu + norm if sub else max(0.0, 1 - 2 * mu - norm)
        P0 = QuadraticPolynomial.from_arrays(0.0, slope * d, H)
        out.append((make_barrier(P0, mu, "below" if sub else "above"), "below" if sub else "above"))
    return out


def barrier_sweep(
    u: GridFunction,
    mus: Sequence[float] = (0.05, 0.1, 0.2),
    count: int = 10,
    nu: Sequence[float] | None = None,
    sigma: float | None = None,
) -> list[SweepRow]:
    """Run the exclusion test for every barrier and ``mu``, in a fixed order."""
    n = u.dim
    if nu is None:
        nu = best_direction(u, Ball.unit(n)).direction
    rows = []
    for mu in mus:
        for k, (P, side) in enumerate(sweep_barriers(n, mu, nu, count)):
            test = subsolution_exclusion_test if side == "below" else supersolution_exclusion_test
            res = test(u, P, mu, sigma)
            rows.append(SweepRow(k, float(mu), res.touch.shift, res.touch.location, res.verdict, side))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["barrier_id", "mu", "t_star", "location", "verdict", "side"])
        for r in rows:
            w.writerow([r.barrier_id, repr(r.mu), repr(r.t_star), r.location, r.verdict, r.side])
