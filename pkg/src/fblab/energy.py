"""The Bernoulli functional, almost-minimality audits and rescaling.

The auditor can only ever *falsify* almost-minimality: it compares ``J(u, B)``
with a finite family of competitors that agree with ``u`` off the free nodes
of ``B``.  A clean audit is reported as ``"not falsified by suite"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .elliptic import harmonic_replacement
from .errors import ClaimFailure, DomainError, PreconditionError, ValidationError
from .lattice import (
    Ball,
    Grid,
    GridFunction,
    box_grid,
    cell_gradient,
    cell_mask,
    cells_to_nodes,
    dirichlet_energy,
    free_nodes,
    interpolate,
    node_distance,
    node_mask,
    positivity_measure,
    zero_measure,
)
from .solver import SolverConfig, minimize_bernoulli

NOT_FALSIFIED = "not falsified by suite"
FALSIFIED = "falsified"


@dataclass(frozen=True)
class EnergyReport:
    dirichlet: float
    positivity: float

    @property
    def total(self) -> float:
        return self.dirichlet + self.positivity

    def to_json(self) -> dict:
        return {"dirichlet": self.dirichlet, "positivity": self.positivity, "total": self.total}


def bernoulli_energy(u: GridFunction, ball: Ball | None = None) -> EnergyReport:
    """``J(u, B) = int_B |grad u|^2 + |{u > 0} cap B|`` on the lattice."""
    return EnergyReport(dirichlet_energy(u, ball), positivity_measure(u, ball))


def zero_set_measure(u: GridFunction, ball: Ball | None = None) -> float:
    return zero_measure(u, ball)


# -- rescaling ------------------------------------------------------------------------


@dataclass(frozen=True)
class Rescaled:
    """``u_rho(y) = u(x0 + rho*y) / rho`` with the factor ``rho^-n`` applied to ``sigma``."""

    u: GridFunction
    rho: float
    center: tuple[float, ...]
    sigma_factor: float

    def sigma(self, sigma: float) -> float:
        return self.sigma_factor * sigma


def rescale(
    u: GridFunction,
    rho: float,
    x0: Sequence[float] | None = None,
    half_width: float = 1.0,
    target: Grid | None = None,
) -> Rescaled:
    """Resample ``u(x0 + rho*y)/rho`` on ``[-half_width, half_width]^n``.

    The default target spacing is ``h/rho`` rounded so the box holds an
    integer number of cells; nodes then coincide with source nodes whenever
    ``x0`` is a source node.
    """
    if not rho > 0:
        raise ValidationError(f"rho must be positive, got {rho}", field="rescale.rho")
    n = u.dim
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    patch_cells = 2 * rho * half_width / u.h
    if patch_cells < 8 - 1e-9:
        raise DomainError(f"source patch spans {patch_cells:.2f} cells per side, fewer than 8")
    if target is None:
        m = max(8, int(round(patch_cells)))
        target = box_grid(half_width, 2 * half_width / m, n)
    pts = x0.reshape((-1,) + (1,) * n) + rho * target.nodes
    if not (u.grid.contains(pts.reshape(n, -1).min(axis=1)) and u.grid.contains(pts.reshape(n, -1).max(axis=1))):
        raise DomainError(f"rescaled box around {tuple(x0)} with rho={rho} escapes the source grid")
    vals = interpolate(u, pts) / rho
    return Rescaled(GridFunction(target, vals, u.role), float(rho), tuple(float(c) for c in x0), rho ** (-n))


# -- almost-minimality audit --------------------------------------------------------------


@dataclass(frozen=True)
class AlmostMinParams:
    """Either multiplicative ``(kappa, beta)`` or additive ``sigma`` almost-minimality."""

    kappa: float = 0.0
    beta: float = 1.0
    sigma: float | None = None

    def __post_init__(self):
        if self.kappa < 0:
            raise ValidationError("kappa must be nonnegative", field="audit.kappa")
        if not 0 < self.beta <= 1:
            raise ValidationError("beta must lie in (0, 1]", field="audit.beta")
        if self.sigma is not None and self.sigma < 0:
            raise ValidationError("sigma must be nonnegative", field="audit.sigma")

    @property
    def mode(self) -> str:
        return "additive" if self.sigma is not None else "multiplicative"


@dataclass(frozen=True)
class Competitor:
    name: str
    values: NDArray[np.float64]


@dataclass
class AuditReport:
    ball: Ball
    worst_ratio: float
    worst_gap: float
    violating_competitor: str | None
    verdict: str
    slack: float
    mode: str = "multiplicative"
    energy: float = 0.0
    competitors: list[tuple[str, float]] = field(default_factory=list)
    additive_verdict: str = NOT_FALSIFIED
    multiplicative_verdict: str = NOT_FALSIFIED

    @property
    def falsified(self) -> bool:
        return self.verdict == FALSIFIED

    def to_json(self) -> dict:
        return {
            "ball": self.ball.to_json(),
            "worst_ratio": self.worst_ratio,
            "worst_gap": self.worst_gap,
            "violating_competitor": self.violating_competitor,
            "verdict": self.verdict,
            "slack": self.slack,
        }


def audit_slack(h: float, energy: float, factor: float = 10.0) -> float:
    """Numerical slack ``factor * h * (1 + J(u, B))`` attached to every verdict."""
    return factor * h * (1.0 + energy)


def _cutoff(grid: Grid, ball: Ball, inner: float, outer: float) -> NDArray[np.float64]:
    """Piecewise-linear radial cutoff: 1 on ``B_inner``, 0 outside ``B_outer``."""
    d = node_distance(grid, ball.center)
    return np.clip((outer - d) / (outer - inner), 0.0, 1.0)


def builtin_suite(
    u: GridFunction,
    ball: Ball,
    include_minimizer: bool = True,
    solver_config: SolverConfig | None = None,
    mu: float = 0.1,
) -> list[Competitor]:
    """The standard competitors, in a fixed order.

    Every competitor is blended back to ``u`` before the ball's boundary ring
    so it is admissible by construction.
    """
    grid = u.grid
    r = ball.radius
    c = np.asarray(ball.center)
    free = free_nodes(cell_mask(grid, ball))
    uv = u.values

    def admissible(vals: NDArray) -> NDArray:
        return np.where(free, np.maximum(vals, 0.0), uv)

    out: list[Competitor] = []
    harm, _ = harmonic_replacement(u, ball)
    out.append(Competitor("harmonic_replacement", harm.values))

    inside = node_mask(grid, ball)
    umax = float(uv[inside].max()) if inside.any() else 0.0
    blend = _cutoff(grid, ball, 0.75 * r, r)
    if umax > grid.h:
        for t in np.geomspace(grid.h, umax, 8):
            out.append(Competitor(f"truncation t={t:.6g}", admissible(uv - t * blend)))

    phi = _cutoff(grid, ball, 0.25 * r, 0.5 * r)
    out.append(Competitor("cutoff u(1-phi)", admissible(uv * (1.0 - phi))))
    out.append(Competitor("cutoff harmonic(1-phi)", admissible(harm.values * (1.0 - phi))))

    n = grid.dim
    x = grid.nodes - c.reshape((-1,) + (1,) * n)
    cells = cell_mask(grid, ball)
    grad = cell_gradient(u)[:, cells]
    gm = grad.mean(axis=1) if grad.size else np.zeros(n)
    nu = gm / np.linalg.norm(gm) if np.linalg.norm(gm) > 0 else np.eye(n)[-1]
    xn = np.tensordot(nu, x, axes=(0, 0))
    bump = (r**2 - np.sum(x**2, axis=0)) / r
    u0 = float(interpolate(u, c))
    sub = np.maximum(u0 + (1 + mu) * xn + mu / (4 * n) * bump, 0.0)
    sup = np.maximum(u0 + (1 - mu) * xn - mu / (4 * n) * bump, 0.0)
    for label, P in (("sub", sub), ("super", sup)):
        out.append(Competitor(f"splice max(u,P{label}+)", admissible(uv + blend * (np.maximum(uv, P) - uv))))
        out.append(Competitor(f"splice min(u,P{label}+)", admissible(uv + blend * (np.minimum(uv, P) - uv))))

    if include_minimizer:
        res = minimize_bernoulli(u, ball, solver_config)
        out.append(Competitor("minimizer", admissible(res.u.values)))
    return out


def audit_almost_minimality(
    u: GridFunction,
    ball: Ball,
    params: AlmostMinParams | None = None,
    suite: Sequence[Competitor] | None = None,
    slack_factor: float = 10.0,
    include_minimizer: bool = True,
    solver_config: SolverConfig | None = None,
) -> AuditReport:
    """Compare ``J(u, B)`` against each competitor and report the worst case.

    Both forms are evaluated: the multiplicative test
    ``J(u) <= (1 + kappa r^beta) J(v) + slack`` and the additive test
    ``J(u) <= J(v) + sigma + slack``.  When no ``sigma`` is given the additive
    test uses ``sigma = kappa r^beta J(u, B)``, the constant implied by the
    multiplicative form whenever ``J(v) <= J(u, B)``, and the implication
    multiplicative-pass => additive-pass is asserted.
    """
    params = params or AlmostMinParams()
    grid = u.grid
    cells = cell_mask(grid, ball)
    free = free_nodes(cells)
    ring = ~free & cells_touching(cells)
    suite = list(builtin_suite(u, ball, include_minimizer, solver_config) if suite is None else suite)
    if not suite:
        raise ValidationError("competitor suite is empty", field="audit.suite")

    Ju = bernoulli_energy(u, ball).total
    slack = audit_slack(grid.h, Ju, slack_factor)
    allowance = params.kappa * ball.radius**params.beta
    sigma = allowance * Ju if params.sigma is None else params.sigma

    rows: list[tuple[str, float]] = []
    worst_ratio, worst_gap = 0.0, -math.inf
    worst_excess, excess_name = -math.inf, None
    worst_add, add_name = -math.inf, None
    for comp in suite:
        vals = np.asarray(comp.values, dtype=float)
        if vals.shape != grid.shape:
            raise PreconditionError("boundary agreement", f"competitor {comp.name!r} has shape {vals.shape}")
        if np.any(vals[ring] != u.values[ring]):
            worst = np.unravel_index(int(np.argmax(np.where(ring, np.abs(vals - u.values), -1.0))), grid.shape)
            raise PreconditionError("boundary agreement", f"competitor {comp.name!r} differs from u at ring node {worst}")
        Jv = bernoulli_energy(GridFunction(grid, vals, "u"), ball).total
        rows.append((comp.name, Jv))
        ratio = Ju / Jv if Jv > 0 else (math.inf if Ju > 0 else 1.0)
        worst_ratio = max(worst_ratio, ratio)
        gap = Ju - Jv
        worst_gap = max(worst_gap, gap)
        excess = Ju - (1.0 + allowance) * Jv
        if excess > worst_excess:
            worst_excess, excess_name = excess, comp.name
        if gap - sigma > worst_add:
            worst_add, add_name = gap - sigma, comp.name

    mult = FALSIFIED if worst_excess > slack else NOT_FALSIFIED
    add = FALSIFIED if worst_add > slack else NOT_FALSIFIED
    if params.sigma is None and mult == NOT_FALSIFIED and add == FALSIFIED:
        raise ClaimFailure("multiplicative pass did not imply the additive pass with sigma = kappa r^beta J(u,B)")
    if params.mode == "multiplicative":
        verdict, name = mult, excess_name
    else:
        verdict, name = add, add_name
    return AuditReport(
        ball=ball,
        worst_ratio=float(worst_ratio),
        worst_gap=float(worst_gap),
        violating_competitor=name if verdict == FALSIFIED else None,
        verdict=verdict,
        slack=float(slack),
        mode=params.mode,
        energy=float(Ju),
        competitors=rows,
        additive_verdict=add,
        multiplicative_verdict=mult,
    )


def cells_touching(cells: NDArray[np.bool_]) -> NDArray[np.bool_]:
    """Nodes that are a corner of at least one cell in ``cells``."""
    return cells_to_nodes(cells.astype(np.int32)) > 0
