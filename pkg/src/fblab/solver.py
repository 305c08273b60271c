"""Discrete minimizers of the Bernoulli functional, synthetic almost minimizers and fixtures.

The discrete functional on a region is

    J_h(u) = h^(n-2) sum_e W_e (u_i - u_j)^2 + sum_i nu_i [u_i > 0],

with edge weights from :class:`fblab.elliptic.DirichletForm` and node volumes
``nu_i``.  Minimization runs in two stages per restart:

1. projected descent on a penalized functional, where the indicator is
   replaced by a concave ramp of width ``eps_pen``.  Directions are
   preconditioned by the Dirichlet form (an H^1 gradient), steps are
   projected onto ``u >= 0`` and accepted by Armijo backtracking;
2. sharpening on the exact functional: alternate discrete-harmonic solves on
   the current positivity set with front moves (add or drop interface nodes
   where the measured free-boundary slope is above or below 1) and exact
   coordinate minimization sweeps.  A step is kept only if J_h decreases.

Large grids are solved on a twice coarser grid first and prolongated; only
the sharpening stage runs on the fine levels.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse.linalg as spla
from numpy.typing import NDArray
from scipy import ndimage

from .elliptic import DIRECT_LIMIT, DirichletForm, solve_restricted
from .errors import PreconditionError, ValidationError
from .lattice import (
    Ball,
    Grid,
    GridFunction,
    cell_mask,
    cells_to_nodes,
    free_nodes,
    interpolate,
    make_grid,
    sample,
)

log = logging.getLogger(__name__)

Field = Callable[[NDArray[np.float64]], NDArray[np.float64]]

# lattice steps around a front move that are re-solved on large levels
BAND_WIDTH = 16


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("FBLAB_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class SolverConfig:
    eps_pen: float | None = None
    max_descent: int = 300
    restarts: int = 3
    tol: float = 1e-9
    max_sharpen: int = 400
    coarse_nodes: int = 60_000
    linear: str = "auto"

    def pen_width(self, h: float) -> float:
        return max(h, math.sqrt(h) / 4) if self.eps_pen is None else self.eps_pen

    def validate(self, h: float) -> None:
        if self.eps_pen is not None and self.eps_pen < h:
            raise ValidationError(f"eps_pen={self.eps_pen} below grid spacing {h}", field="solver.eps_pen")
        for name in ("max_descent", "restarts", "max_sharpen", "coarse_nodes"):
            if getattr(self, name) <= 0:
                raise ValidationError("must be positive", field=f"solver.{name}")
        if self.tol <= 0:
            raise ValidationError("must be positive", field="solver.tol")


@dataclass
class SolveResult:
    u: GridFunction
    dirichlet: float
    positivity: float
    restart_energies: list[float]
    log: list[tuple[int, float, float, float, str]] = field(default_factory=list)
    converged: bool = True

    @property
    def total(self) -> float:
        return self.dirichlet + self.positivity

    @property
    def status(self) -> str:
        return "converged" if self.converged else "unconverged"

    def write_log(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "dirichlet", "positivity", "total", "stage"])
            for it, d, p, t, stage in self.log:
                w.writerow([it, repr(d), repr(p), repr(t), stage])


def _ramp(s: NDArray) -> NDArray:
    return np.where(s < 1.0, s * (2.0 - s), 1.0)


def _ramp_slope(s: NDArray) -> NDArray:
    return np.where(s < 1.0, 2.0 - 2.0 * s, 0.0)


class BernoulliProblem:
    """The discrete (optionally weighted) functional with boundary data ``g``."""

    def __init__(
        self,
        g: GridFunction,
        domain: Ball | None = None,
        a: Field | None = None,
        q: Field | None = None,
    ):
        grid = g.grid
        self.grid = grid
        self.domain = domain
        self.g = g
        self.cells = cell_mask(grid, domain)
        a_cells = None if a is None else np.asarray(a(grid.cell_centers), dtype=float)
        q_cells = np.ones(grid.cell_shape) if q is None else np.asarray(q(grid.cell_centers), dtype=float)
        self.form = DirichletForm(grid, self.cells, a_cells)
        self.nu = cells_to_nodes(np.where(self.cells, q_cells, 0.0)).ravel() * grid.cell_volume / 2**grid.dim
        self.free = free_nodes(self.cells).ravel()
        self.free_idx = np.flatnonzero(self.free)
        self.base = np.where(self.free, 0.0, g.values.ravel())
        if np.any(self.base < 0):
            raise PreconditionError("boundary data", "g must be nonnegative")
        parity = np.indices(grid.shape).sum(axis=0).ravel() % 2
        self.colors = [self.free & (parity == c) for c in (0, 1)]
        self._fixed_energy_cache: float | None = None

    @property
    def nfree(self) -> int:
        return int(self.free_idx.size)

    def full(self, v: NDArray) -> NDArray:
        out = self.base.copy()
        out[self.free] = v.ravel()[self.free]
        return out

    def energy(self, v: NDArray) -> tuple[float, float]:
        v = v.ravel()
        return self.form.energy(v), float(np.sum(self.nu[v > 0]))

    def penalized(self, v: NDArray, eps: float) -> float:
        return self.form.energy(v) + float(np.dot(self.nu, _ramp(v / eps)))

    def penalized_grad(self, v: NDArray, eps: float) -> NDArray:
        g = 2.0 * self.form.scale * self.form.apply(v) + self.nu * _ramp_slope(v / eps) / eps
        return g[self.free_idx]

    def harmonic_on(self, positive: NDArray[np.bool_], v: NDArray, band: NDArray[np.bool_] | None = None) -> NDArray:
        """Discrete harmonic on ``positive`` (a subset of the free nodes), zero on the other free nodes.

        With ``band`` only the nodes of ``positive`` inside the band are solved
        for; the rest of ``positive`` keeps its values from ``v``.
        """
        if band is None:
            vals = self.base.copy()
            unknown = positive
        else:
            vals = np.where(positive | ~self.free, v.ravel(), 0.0)
            unknown = positive & band
        system = self.form.restricted(unknown, vals)
        x0 = v.ravel()[system.index]
        method = self.linear if system.index.size > DIRECT_LIMIT else "direct"
        x, _ = solve_restricted(system, x0, method=method, tol=self.solve_tol)
        vals[system.index] = np.maximum(x, 0.0)
        return vals

    def band_around(self, changed: NDArray[np.bool_], width: int = BAND_WIDTH) -> NDArray[np.bool_]:
        """Free nodes within ``width`` lattice steps (Euclidean) of a changed node."""
        grid = self.grid
        idx = np.stack(np.unravel_index(np.flatnonzero(changed), grid.shape), axis=1)
        band = np.zeros(grid.shape, dtype=bool)
        if idx.size == 0:
            return band.ravel()
        r = np.arange(-width, width + 1)
        off = np.stack(np.meshgrid(*([r] * grid.dim), indexing="ij"), axis=-1).reshape(-1, grid.dim)
        off = off[np.sum(off**2, axis=1) <= width * width]
        for chunk in range(0, len(idx), 4096):
            pts = (idx[chunk : chunk + 4096, None, :] + off[None, :, :]).reshape(-1, grid.dim)
            pts = np.clip(pts, 0, np.asarray(grid.shape) - 1)
            band[tuple(pts.T)] = True
        return band.ravel() & self.free

    linear = "amg"

    @property
    def solve_tol(self) -> float:
        return max(1e-10, self.grid.h**3)

    def sweep(self, v: NDArray, sweeps: int = 2) -> NDArray:
        """Red-black exact coordinate minimization of J_h."""
        v = v.copy()
        diag = np.where(self.form.diag > 0, self.form.diag, 1.0)
        for _ in range(sweeps):
            for color in self.colors:
                t = self.form.neighbor_sum(v)[color] / diag[color]
                keep = self.form.scale * diag[color] * t * t > self.nu[color]
                v[color] = np.where(keep, t, 0.0)
        return v

    def slope_estimate(self, v: NDArray) -> NDArray:
        """|grad u| at positive nodes with one-sided differences into the positive set."""
        grid = self.grid
        u = v.reshape(grid.shape)
        pos = u > 0
        sq = np.zeros(grid.shape)
        for d in range(grid.dim):
            up = np.zeros(grid.shape)
            dn = np.zeros(grid.shape)
            pu = np.zeros(grid.shape, dtype=bool)
            pd = np.zeros(grid.shape, dtype=bool)
            sl_hi = [slice(None)] * grid.dim
            sl_lo = [slice(None)] * grid.dim
            sl_hi[d] = slice(1, None)
            sl_lo[d] = slice(None, -1)
            up[tuple(sl_lo)] = u[tuple(sl_hi)]
            pu[tuple(sl_lo)] = pos[tuple(sl_hi)]
            dn[tuple(sl_hi)] = u[tuple(sl_lo)]
            pd[tuple(sl_hi)] = pos[tuple(sl_lo)]
            der = np.where(pu & pd, 0.5 * (up - dn), np.where(pu, up - u, np.where(pd, u - dn, 0.0)))
            sq += der**2
        return (np.sqrt(sq) / grid.h).ravel() * pos.ravel()

    def front_candidates(self, v: NDArray) -> list[NDArray[np.bool_]]:
        grid = self.grid
        pos = (v > 0).reshape(grid.shape)
        est = self.slope_estimate(v).reshape(grid.shape)
        footprint = ndimage.generate_binary_structure(grid.dim, 1)
        near_pos = ndimage.binary_dilation(pos, footprint) & ~pos
        near_zero = ndimage.binary_dilation(~pos, footprint) & pos
        nbr_est = ndimage.maximum_filter(np.where(pos, est, 0.0), footprint=footprint, mode="constant")
        free = self.free.reshape(grid.shape)
        adds = (near_pos & free & (nbr_est > 1.0)).ravel()
        drops = (near_zero & free & (est < 1.0)).ravel()
        score_add = (nbr_est - 1.0).ravel()
        score_drop = (1.0 - est).ravel()
        P = (v > 0) & self.free
        out = []
        if adds.any() and drops.any():
            out.append((P | adds) & ~drops)
        if adds.any():
            out.append(P | adds)
        if drops.any():
            out.append(P & ~drops)
        for mask, score, grow in ((adds, score_add, True), (drops, score_drop, False)):
            if mask.sum() > 3:
                cut = np.quantile(score[mask], 0.75)
                sub = mask & (score >= cut)
                out.append(P | sub if grow else P & ~sub)
        return out


def _log_row(logbook: list, prob: BernoulliProblem, v: NDArray, stage: str, value: tuple[float, float] | None = None):
    d, p = prob.energy(v) if value is None else value
    logbook.append((len(logbook), d, p, d + p, stage))


def _descend(prob: BernoulliProblem, v: NDArray, config: SolverConfig, logbook: list) -> tuple[NDArray, bool]:
    """Projected, H^1-preconditioned gradient descent with Armijo backtracking."""
    eps = config.pen_width(prob.grid.h)
    system = prob.form.restricted(prob.free, prob.base)
    if prob.nfree == 0:
        return v, True
    lu = spla.splu((2.0 * prob.form.scale * system.matrix).tocsc())
    v = prob.full(v)
    E = prob.penalized(v, eps)
    logbook.append((len(logbook), prob.form.energy(v), E - prob.form.energy(v), E, "penalized"))
    converged = False
    for _ in range(config.max_descent):
        grad = prob.penalized_grad(v, eps)
        d = -lu.solve(grad)
        t = 1.0
        x = v[prob.free_idx]
        while True:
            trial = v.copy()
            trial[prob.free_idx] = np.maximum(x + t * d, 0.0)
            Et = prob.penalized(trial, eps)
            if Et <= E + 1e-4 * float(grad @ (trial[prob.free_idx] - x)):
                break
            t *= 0.5
            if t < 1e-10:
                trial, Et = v, E
                break
        drop = E - Et
        v, E = trial, Et
        dv = prob.form.energy(v)
        logbook.append((len(logbook), dv, E - dv, E, "penalized"))
        if drop <= config.tol * max(1.0, abs(E)):
            converged = True
            break
    return v, converged


def _sharpen(prob: BernoulliProblem, v: NDArray, config: SolverConfig, logbook: list, threshold: float) -> tuple[NDArray, bool]:
    """Front moves and sweeps on the exact functional, keeping only steps that lower J.

    On levels larger than the direct-solve limit each trial re-solves only a
    band around the moved nodes; a global harmonic solve closes every round
    and the rounds repeat until the positivity set settles.
    """
    stage = f"sharpen h={prob.grid.h:.6g}"
    local = prob.nfree > DIRECT_LIMIT
    P = prob.free & (v.ravel() > threshold)
    v = prob.harmonic_on(P, v)
    J = sum(prob.energy(v))
    _log_row(logbook, prob, v, stage)
    steps = 0
    for _ in range(config.max_sharpen if local else 1):
        v, J, steps, settled = _sharpen_round(prob, v, J, config, logbook, stage, steps, local)
        if not local:
            return v, settled
        w = prob.harmonic_on(prob.free & (v > 0), v)
        dw = prob.energy(w)
        improved = sum(dw) < J - 1e-13 * max(1.0, J)
        if improved:
            v, J = w, sum(dw)
            _log_row(logbook, prob, v, stage, dw)
        if settled and not improved:
            return v, True
        if steps >= config.max_sharpen:
            break
    return v, False


def _sharpen_round(
    prob: BernoulliProblem, v: NDArray, J: float, config: SolverConfig, logbook: list, stage: str, steps: int, local: bool
) -> tuple[NDArray, float, int, bool]:
    """Accept front moves and sweeps until none lowers J; returns ``settled``."""

    def trial(cand: NDArray[np.bool_], start: NDArray) -> NDArray:
        if not local:
            return prob.harmonic_on(cand, start)
        changed = cand != (prob.free & (v > 0))
        return prob.harmonic_on(cand, start, prob.band_around(changed))

    while steps < config.max_sharpen:
        steps += 1
        accepted = False
        for cand in prob.front_candidates(v):
            w = trial(cand, v)
            dw = prob.energy(w)
            if sum(dw) < J - 1e-13 * max(1.0, J):
                v, J, accepted = w, sum(dw), True
                _log_row(logbook, prob, v, stage, dw)
                break
        if accepted:
            continue
        w = prob.sweep(v)
        Pw = prob.free & (w > 0)
        if np.array_equal(Pw, prob.free & (v > 0)):
            return v, J, steps, True
        w = trial(Pw, w)
        dw = prob.energy(w)
        if sum(dw) < J - 1e-13 * max(1.0, J):
            v, J = w, sum(dw)
            _log_row(logbook, prob, v, stage, dw)
        else:
            return v, J, steps, True
    return v, J, steps, False


def _seeds(prob: BernoulliProblem, count: int) -> list[NDArray]:
    grid = prob.grid
    harmonic = prob.harmonic_on(prob.free.copy(), prob.base)
    ring = ~prob.free & (cells_to_nodes(prob.cells.astype(np.int32)).ravel() > 0)
    zero_ring = (ring & (prob.base <= 0)).reshape(grid.shape)
    gmax = float(prob.base[ring].max()) if ring.any() else 0.0
    if zero_ring.any():
        dist = ndimage.distance_transform_edt(~zero_ring) * grid.h
        dmax = float(dist.ravel()[prob.free].max()) if prob.nfree else 1.0
        scaled = gmax * dist.ravel() / max(dmax, grid.h)
    else:
        scaled = np.full(prob.base.shape, gmax)
    seeds = [harmonic, prob.full(scaled), prob.full(np.zeros_like(prob.base))]
    return seeds[:count]


def _coarsenable(grid: Grid) -> bool:
    return all((n - 1) % 2 == 0 and n >= 5 for n in grid.shape)


def _solve(g: GridFunction, domain: Ball | None, config: SolverConfig, a: Field | None, q: Field | None) -> SolveResult:
    prob = BernoulliProblem(g, domain, a, q)
    prob.linear = config.linear if config.linear != "auto" else "amg"
    h = g.grid.h
    if prob.nfree > config.coarse_nodes and _coarsenable(g.grid):
        coarse_grid = make_grid(g.grid.bounds, 2 * h)
        slices = tuple(slice(None, None, 2) for _ in range(g.dim))
        coarse = _solve(GridFunction(coarse_grid, g.values[slices], g.role), domain, config, a, q)
        v0 = prob.full(interpolate(coarse.u, g.grid.nodes).ravel())
        logbook = list(coarse.log)
        v, ok = _sharpen(prob, v0, config, logbook, threshold=0.5 * h)
        d, p = prob.energy(v)
        return SolveResult(GridFunction(g.grid, v.reshape(g.grid.shape)), d, p, coarse.restart_energies, logbook, ok and coarse.converged)

    def run(seed: NDArray) -> tuple[NDArray, list, bool]:
        book: list = []
        v, ok1 = _descend(prob, seed, config, book)
        v, ok2 = _sharpen(prob, v, config, book, threshold=0.5 * h)
        return v, book, ok1 and ok2

    seeds = _seeds(prob, config.restarts)
    with ThreadPoolExecutor(max_workers=min(thread_cap(), len(seeds))) as pool:
        runs = list(pool.map(run, seeds))
    energies = [sum(prob.energy(v)) for v, _, _ in runs]
    best = int(np.argmin(energies))
    v, book, ok = runs[best]
    d, p = prob.energy(v)
    return SolveResult(GridFunction(g.grid, v.reshape(g.grid.shape)), d, p, energies, book, ok)


def minimize_bernoulli(g: GridFunction, domain: Ball | None = None, config: SolverConfig | None = None) -> SolveResult:
    """Discrete minimizer of J with ``u = g`` off the free nodes of ``domain`` (whole grid if None)."""
    config = config or SolverConfig()
    config.validate(g.grid.h)
    if g.role != "u":
        g = GridFunction(g.grid, g.values, "u")
    return _solve(g, domain, config, None, None)


def oscillation_violations(
    coeff: Field, grid: Grid, domain: Ball | None, kappa: float, beta: float, min_radius: float | None = None
) -> list[tuple[tuple[float, ...], float, float]]:
    """Dyadic balls where ``osc coeff > kappa r^beta``; returns (center, radius, oscillation)."""
    centers = grid.cell_centers
    vals = np.asarray(coeff(centers), dtype=float)
    vals = np.broadcast_to(vals, grid.cell_shape)
    R = domain.radius if domain is not None else float(np.max(grid.hi - grid.lo)) / 2
    c0 = np.asarray(domain.center if domain is not None else (grid.lo + grid.hi) / 2)
    rmin = 4 * grid.h if min_radius is None else min_radius
    bad = []
    r = R / 2
    while r >= rmin:
        offsets = np.arange(-R, R + 1e-12, r)
        for off in np.stack(np.meshgrid(*([offsets] * grid.dim), indexing="ij")).reshape(grid.dim, -1).T:
            x = c0 + off
            if np.linalg.norm(off) + r > R + 1e-12:
                continue
            inside = np.sqrt(np.sum((centers - x.reshape((-1,) + (1,) * grid.dim)) ** 2, axis=0)) < r
            if inside.sum() < 2:
                continue
            osc = float(vals[inside].max() - vals[inside].min())
            if osc > kappa * r**beta + 1e-12:
                bad.append((tuple(float(c) for c in x), r, osc))
        r /= 2
    return bad


def generate_almost_minimizer(
    a: Field,
    q: Field,
    g: GridFunction,
    config: SolverConfig | None = None,
    domain: Ball | None = None,
    kappa: float = 1.0,
    beta: float = 1.0,
) -> SolveResult:
    """Minimizer of ``int a|grad u|^2 + q chi_{u>0}``; an almost minimizer of J at ``(C kappa, beta)``.

    ``a, q >= 1`` with ``osc a + osc q <= kappa r^beta`` on dyadic balls is checked first.
    """
    config = config or SolverConfig()
    config.validate(g.grid.h)
    grid = g.grid
    for name, f in (("a", a), ("q", q)):
        vals = np.asarray(f(grid.cell_centers), dtype=float)
        if np.any(vals < 1.0 - 1e-12):
            raise PreconditionError(f"coefficient {name}", "must be >= 1")

    def total(x: NDArray) -> NDArray:
        return np.asarray(a(x), dtype=float) + np.asarray(q(x), dtype=float)

    bad = oscillation_violations(total, grid, domain, kappa, beta)
    if bad:
        c, r, osc = bad[0]
        raise PreconditionError("oscillation bound", f"osc a + osc q = {osc:.4g} > {kappa}*{r:.4g}^{beta} on ball at {c}")
    if g.role != "u":
        g = GridFunction(g.grid, g.values, "u")
    return _solve(g, domain, config, a, q)


# -- closed-form fixtures -----------------------------------------------------------------


def _unit(v: Sequence[float]) -> NDArray[np.float64]:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not n > 0:
        raise ValidationError("direction must be nonzero", field="fixture.nu")
    if abs(n - 1.0) > 1e-9:
        raise ValidationError(f"direction must be a unit vector, |nu| = {n}", field="fixture.nu")
    return v / n


def _dot(x: NDArray, nu: NDArray) -> NDArray:
    return np.tensordot(nu, x, axes=(0, 0))


def tilt_direction(nu: Sequence[float], slope: float) -> NDArray[np.float64]:
    """``nu`` tilted towards the first axis orthogonal to it: ``(nu + slope*tau)/|...|``."""
    nu = np.asarray(nu, dtype=float)
    e = np.zeros_like(nu)
    e[0] = 1.0
    tau = e - np.dot(e, nu) * nu
    if np.linalg.norm(tau) < 1e-12:
        e = np.zeros_like(nu)
        e[1] = 1.0
        tau = e - np.dot(e, nu) * nu
    tau /= np.linalg.norm(tau)
    t = nu + slope * tau
    return t / np.linalg.norm(t)


def fixture_field(name: str, dim: int = 2, **params) -> Field:
    """Closed form of a named fixture as a callable on coordinates ``(dim, ...)``."""
    if name == "half_plane":
        nu = _unit(params.get("nu", np.eye(dim)[-1]))
        return lambda x: np.maximum(_dot(x, nu), 0.0)
    if name == "tilted_plane":
        nu = tilt_direction(_unit(params.get("nu", np.eye(dim)[-1])), float(params.get("slope", 0.0)))
        return lambda x: np.maximum(_dot(x, nu), 0.0)
    if name == "wedge":
        gamma = float(params.get("gamma", 1.0))
        if not gamma > 0:
            raise ValidationError("gamma must be positive", field="fixture.gamma")
        nu = _unit(params.get("nu", np.eye(dim)[-1]))
        return lambda x: np.maximum(gamma * _dot(x, nu), 0.0)
    if name == "constant":
        c = float(params.get("c", 1.0))
        if c < 0:
            raise ValidationError("constant must be nonnegative", field="fixture.c")
        return lambda x: np.full(x.shape[1:], c)
    if name == "exterior_radial":
        r0 = float(params.get("r0", 0.25))
        if not r0 > 0:
            raise ValidationError("r0 must be positive", field="fixture.r0")
        z = np.asarray(params.get("center", np.zeros(dim)), dtype=float)

        def radial(x: NDArray) -> NDArray:
            r = np.sqrt(np.sum((x - z.reshape((-1,) + (1,) * (x.ndim - 1))) ** 2, axis=0))
            if dim == 2:
                val = r0 * np.log(np.maximum(r, 1e-300) / r0)
            else:
                val = r0 * (1.0 - r0 / np.maximum(r, 1e-300))
            return np.where(r >= r0, np.maximum(val, 0.0), 0.0)

        return radial
    raise ValidationError(f"unknown fixture {name!r}", field="fixture.name")


def fixture(name: str, grid: Grid, **params) -> GridFunction:
    return sample(fixture_field(name, grid.dim, **params), grid)
