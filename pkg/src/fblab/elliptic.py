"""Discrete Dirichlet forms, harmonic replacement and the half-ball Neumann solve."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from .errors import ConvergenceError, DomainError, PreconditionError
from .lattice import (
    Ball,
    Grid,
    GridFunction,
    _pair_sum,
    cell_gradient_norm,
    cell_mask,
    cells_to_nodes,
    free_nodes,
    node_mask,
)

log = logging.getLogger(__name__)

DIRECT_LIMIT = 150_000


def default_tol(h: float) -> float:
    return max(1e-10, h**3)


@dataclass(frozen=True)
class SolveDiagnostics:
    iterations: int
    residual: float
    tolerance: float
    method: str = "cg"
    unknowns: int = 0

    @property
    def converged(self) -> bool:
        return self.residual <= self.tolerance


class DirichletForm:
    """``h^(n-2) * sum_e W_e (u_i - u_j)^2`` over the edges of a set of cells.

    ``W_e`` is the coefficient summed over the cells containing the edge,
    divided by ``2**(n-1)``, so an edge interior to the region has weight
    equal to the local coefficient.  With unit coefficients the form equals
    :func:`fblab.lattice.dirichlet_energy` on the same cells.
    """

    def __init__(self, grid: Grid, cells: NDArray[np.bool_], coeff: NDArray[np.float64] | None = None):
        self.grid = grid
        self.cells = cells
        n = grid.dim
        cw = cells.astype(float) if coeff is None else np.where(cells, coeff, 0.0)
        idx = np.arange(int(np.prod(grid.shape))).reshape(grid.shape)
        heads, tails, weights = [], [], []
        for d in range(n):
            w = cw
            for o in range(n):
                if o != d:
                    pad = [(1, 1) if a == o else (0, 0) for a in range(n)]
                    w = _pair_sum(np.pad(w, pad), o)
            w = w / 2 ** (n - 1)
            lo = [slice(None)] * n
            hi = [slice(None)] * n
            lo[d] = slice(None, -1)
            hi[d] = slice(1, None)
            keep = w > 0
            heads.append(idx[tuple(lo)][keep])
            tails.append(idx[tuple(hi)][keep])
            weights.append(w[keep])
        self.a = np.concatenate(heads)
        self.b = np.concatenate(tails)
        self.w = np.concatenate(weights)
        self.scale = grid.h ** (n - 2)
        self.size = idx.size
        self.diag = np.bincount(self.a, self.w, self.size) + np.bincount(self.b, self.w, self.size)

    def energy(self, values: NDArray[np.float64]) -> float:
        v = values.ravel()
        return float(self.scale * np.dot(self.w, (v[self.a] - v[self.b]) ** 2))

    def apply(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """Graph Laplacian ``L u`` (unscaled), flat."""
        v = values.ravel()
        flux = self.w * (v[self.a] - v[self.b])
        return np.bincount(self.a, flux, self.size) - np.bincount(self.b, flux, self.size)

    def neighbor_sum(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        v = values.ravel()
        return np.bincount(self.a, self.w * v[self.b], self.size) + np.bincount(self.b, self.w * v[self.a], self.size)

    def restricted(self, unknown: NDArray[np.bool_], values: NDArray[np.float64]) -> "RestrictedSystem":
        return RestrictedSystem(self, unknown.ravel(), values.ravel())


class RestrictedSystem:
    """``L_UU x = b`` with the remaining nodes frozen at ``values``."""

    def __init__(self, form: DirichletForm, unknown: NDArray[np.bool_], values: NDArray[np.float64]):
        self.form = form
        self.unknown = unknown
        self.index = np.flatnonzero(unknown)
        m = -np.ones(form.size, dtype=np.int64)
        m[self.index] = np.arange(self.index.size)
        touch = unknown[form.a] | unknown[form.b]
        fa, fb, fw = form.a[touch], form.b[touch], form.w[touch]
        ia, ib = m[fa], m[fb]
        both = (ia >= 0) & (ib >= 0)
        nU = self.index.size
        rows = np.concatenate([ia[both], ib[both], np.arange(nU)])
        cols = np.concatenate([ib[both], ia[both], np.arange(nU)])
        data = np.concatenate([-fw[both], -fw[both], form.diag[self.index]])
        self.matrix = sp.csr_matrix((data, (rows, cols)), shape=(nU, nU))
        va, vb = values[fa], values[fb]
        a_only = (ia >= 0) & (ib < 0)
        b_only = (ib >= 0) & (ia < 0)
        rhs = np.bincount(ia[a_only], fw[a_only] * vb[a_only], nU)
        rhs += np.bincount(ib[b_only], fw[b_only] * va[b_only], nU)
        self.rhs = rhs
        n = form.grid.dim
        self.norm = form.grid.h**2 * form.diag[self.index] / (2 * n)

    def residual(self, x: NDArray[np.float64]) -> float:
        if x.size == 0:
            return 0.0
        return float(np.max(np.abs(self.rhs - self.matrix @ x) / self.norm))


def _cg(A: sp.csr_matrix, b: NDArray, x0: NDArray, norm: NDArray, tol: float, cap: int) -> tuple[NDArray, int, float]:
    """Jacobi-preconditioned CG stopping on the scaled max-norm residual."""
    x = x0.copy()
    dinv = 1.0 / A.diagonal()
    r = b - A @ x
    res = float(np.max(np.abs(r) / norm)) if r.size else 0.0
    if res <= tol:
        return x, 0, res
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while it < cap:
        it += 1
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        if it % 50 == 0:
            r = b - A @ x
        else:
            r -= alpha * Ap
        res = float(np.max(np.abs(r) / norm))
        if res <= tol:
            r = b - A @ x
            res = float(np.max(np.abs(r) / norm))
            if res <= tol:
                break
        z = dinv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it, res


def solve_restricted(
    system: RestrictedSystem,
    x0: NDArray[np.float64] | None = None,
    method: str = "cg",
    tol: float | None = None,
    max_iter: int | None = None,
) -> tuple[NDArray[np.float64], SolveDiagnostics]:
    h = system.form.grid.h
    tol = default_tol(h) if tol is None else tol
    nU = system.index.size
    if nU == 0:
        return np.zeros(0), SolveDiagnostics(0, 0.0, tol, method, 0)
    x = np.zeros(nU) if x0 is None else np.asarray(x0, dtype=float).copy()
    if method == "auto":
        method = "direct" if nU <= DIRECT_LIMIT else "amg"
    cap = int(50 * np.sqrt(nU)) if max_iter is None else max_iter
    A, b = system.matrix, system.rhs
    iterations = 0
    if method == "cg":
        x, iterations, res = _cg(A, b, x, system.norm, tol, cap)
    elif method == "direct":
        x = spla.splu(A.tocsc()).solve(b)
        x, iterations, res = _cg(A, b, x, system.norm, tol, cap)
    elif method == "amg":
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric")
        for _ in range(4):
            x = ml.solve(b, x0=x, tol=1e-13, accel="cg", maxiter=200)
            res = system.residual(x)
            if res <= tol:
                break
        x, extra, res = _cg(A, b, x, system.norm, tol, cap)
        iterations += extra
    else:
        raise ValueError(f"unknown linear method {method!r}")
    diag = SolveDiagnostics(iterations, res, tol, method, nU)
    if not diag.converged:
        raise ConvergenceError(f"{method} solve stalled at residual {res:.3e} > {tol:.3e}", iterations, res)
    return x, diag


def ring_mask(form: DirichletForm, unknown: NDArray[np.bool_]) -> NDArray[np.bool_]:
    """Frozen nodes sharing an edge with an unknown node."""
    u = unknown.ravel()
    ring = np.zeros(form.size, dtype=bool)
    ring[form.b[u[form.a]]] = True
    ring[form.a[u[form.b]]] = True
    ring &= ~u
    return ring.reshape(unknown.shape)


def harmonic_replacement(
    u: GridFunction, ball: Ball, method: str = "cg", tol: float | None = None
) -> tuple[GridFunction, SolveDiagnostics]:
    """Replace ``u`` inside ``ball`` by the discrete harmonic function with its ring values.

    Unknowns are the nodes all of whose cells lie in the ball; the remaining
    nodes of the ball's cells form the ring carrying the Dirichlet data.
    """
    cells = cell_mask(u.grid, ball)
    unknown = free_nodes(cells)
    form = DirichletForm(u.grid, cells)
    system = form.restricted(unknown, u.values)
    x, diag = solve_restricted(system, u.values.ravel()[system.index], method=method, tol=tol)
    out = u.values.copy().ravel()
    out[system.index] = x
    out = out.reshape(u.grid.shape)
    if u.role == "u":
        out = np.maximum(out, 0.0)
    return GridFunction(u.grid, out, u.role), diag


class ClosenessReport(NamedTuple):
    sup_difference: float
    implied_constant: float
    lipschitz: float


def closeness_check(u: GridFunction, ball: Ball, sigma: float) -> ClosenessReport:
    """``sup |u - v|`` on the half ball, ``v`` the harmonic replacement, and that sup over ``sigma^(1/(n+2))``."""
    inside = node_mask(u.grid, ball)
    if np.any(u.values[inside] <= 0):
        raise PreconditionError("positivity", "ball is not contained in {u > 0}")
    v, _ = harmonic_replacement(u, ball)
    half = node_mask(u.grid, ball.scaled(0.5))
    diff = float(np.max(np.abs(u.values - v.values)[half]))
    cells = cell_mask(u.grid, ball)
    lip = float(cell_gradient_norm(u)[cells].max())
    n = u.dim
    implied = diff / sigma ** (1.0 / (n + 2)) if sigma > 0 else (0.0 if diff == 0 else float("inf"))
    return ClosenessReport(diff, implied, lip)


# -- linearized Neumann problem on the upper half ball -------------------------------------


def halfball_masks(grid: Grid, radius: float = 0.5) -> tuple[NDArray[np.bool_], NDArray[np.bool_]]:
    """Cells of the upper half ball and the unknown nodes (flat row included)."""
    n = grid.dim
    if not grid.contains((0.0,) * n, radius):
        raise DomainError(f"half ball of radius {radius} escapes the grid")
    s = (0.0 - grid.bounds[-1][0]) / grid.h
    if abs(s - round(s)) > 1e-9:
        raise DomainError("grid has no node row on {x_n = 0}")
    ball = Ball((0.0,) * n, radius)
    full = cell_mask(grid, ball)
    upper = full & (grid.cell_centers[-1] > 0)
    unknown = free_nodes(full) & (grid.nodes[-1] >= -1e-12 * grid.h)
    return upper, unknown


def neumann_halfball_solve(
    g: Callable[[NDArray[np.float64]], NDArray[np.float64]] | GridFunction,
    grid: Grid | None = None,
    radius: float = 0.5,
    method: str = "cg",
    tol: float | None = None,
) -> tuple[GridFunction, SolveDiagnostics]:
    """Harmonic in the upper half ball, zero normal derivative on the flat part.

    The flat-row nodes are unknowns of the energy restricted to upper cells,
    which is the ghost-node reflection scheme ``u(x', -h) = u(x', h)`` written
    in symmetric form.  Returned values are zero away from the closed half ball.
    """
    if isinstance(g, GridFunction):
        grid = g.grid
        data = g.values
    else:
        if grid is None:
            raise ValueError("grid is required when g is a callable")
        data = np.broadcast_to(np.asarray(g(grid.nodes), dtype=float), grid.shape)
    cells, unknown = halfball_masks(grid, radius)
    form = DirichletForm(grid, cells)
    support = cells_to_nodes(cells.astype(np.int32)) > 0
    ring = support & ~unknown
    if not np.all(np.isfinite(data[ring])):
        raise PreconditionError("boundary data", "non-finite value on the curved boundary")
    values = np.where(ring, data, 0.0)
    system = form.restricted(unknown, values)
    x, diag = solve_restricted(system, None, method=method, tol=tol)
    out = values.ravel().copy()
    out[system.index] = x
    return GridFunction(grid, out.reshape(grid.shape), "signed"), diag
