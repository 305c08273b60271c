"""Flatness of ``u`` relative to half-plane solutions and the free-boundary geometry.

The flatness of ``u`` in ``B_r(c)`` against a unit direction ``nu`` is
``sup_{B_r(c)} |u - ((x - c).nu)^+| / r``.  Free boundaries are extracted as
points on grid edges whose endpoints straddle the level ``h/2``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .elliptic import SolveDiagnostics, neumann_halfball_solve
from .errors import DomainError, PreconditionError, ValidationError
from .lattice import (
    Ball,
    Grid,
    GridFunction,
    box_grid,
    cell_gradient,
    interpolate,
    node_mask,
    require_inside,
)

DIRECTIONS_2D = 720
DIRECTIONS_3D = 2048
MESH_FLOOR = 16


@dataclass(frozen=True)
class FlatnessCertificate:
    scale: float
    direction: tuple[float, ...]
    deviation: float
    center: tuple[float, ...] = (0.0, 0.0)

    def __post_init__(self):
        nu = np.asarray(self.direction, dtype=float)
        object.__setattr__(self, "direction", tuple(float(c) for c in nu / np.linalg.norm(nu)))

    def to_json(self) -> dict:
        return {"scale": self.scale, "direction": list(self.direction), "deviation": self.deviation, "center": list(self.center)}


# -- flatness and the direction search -----------------------------------------------------


def _ball_samples(u: GridFunction, ball: Ball) -> tuple[NDArray, NDArray]:
    require_inside(u.grid, ball)
    mask = node_mask(u.grid, ball)
    c = np.asarray(ball.center).reshape((-1,) + (1,) * u.dim)
    x = (u.grid.nodes - c)[:, mask]
    return x, u.values[mask]


def _deviation(x: NDArray, vals: NDArray, dirs: NDArray, radius: float, chunk: int = 64) -> NDArray:
    """``max |vals - (x.nu)^+| / r`` for each row ``nu`` of ``dirs``."""
    out = np.empty(len(dirs))
    for start in range(0, len(dirs), chunk):
        proj = dirs[start : start + chunk] @ x
        out[start : start + chunk] = np.max(np.abs(vals - np.maximum(proj, 0.0)), axis=1)
    return out / radius


def _pole_deviation(u: GridFunction, ball: Ball, nu: NDArray) -> float:
    """Deviation at the boundary point ``center + r nu``, where ``(x.nu)^+`` peaks.

    Nodes alone can miss this point by up to ``h``; the interpolated value there
    makes the sup over the closed ball exact for fields that are linear near it.
    """
    pole = np.asarray(ball.center, dtype=float) + ball.radius * nu
    value = float(interpolate(u, pole.reshape(-1, 1))[0])
    return abs(value - ball.radius) / ball.radius


def flatness(u: GridFunction, ball: Ball, nu: Sequence[float]) -> float:
    nu = np.asarray(nu, dtype=float)
    nu = nu / np.linalg.norm(nu)
    x, vals = _ball_samples(u, ball)
    return max(float(_deviation(x, vals, nu[None, :], ball.radius)[0]), _pole_deviation(u, ball, nu))


def direction_net(dim: int) -> NDArray[np.float64]:
    """720 equally spaced angles in 2D, 2048 Fibonacci-sphere points in 3D."""
    if dim == 2:
        th = 2 * np.pi * np.arange(DIRECTIONS_2D) / DIRECTIONS_2D
        return np.stack([np.sin(th), np.cos(th)], axis=1)
    k = np.arange(DIRECTIONS_3D) + 0.5
    z = 1 - 2 * k / DIRECTIONS_3D
    phi = np.pi * (1 + 5**0.5) * k
    s = np.sqrt(1 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def _angles_to_dir(p: NDArray) -> NDArray:
    if p.size == 1:
        return np.array([np.sin(p[0]), np.cos(p[0])])
    th, ph = p
    return np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])


def _dir_to_angles(nu: NDArray) -> NDArray:
    if nu.size == 2:
        return np.array([math.atan2(nu[0], nu[1])])
    return np.array([math.acos(max(-1.0, min(1.0, nu[2]))), math.atan2(nu[1], nu[0])])


def best_direction(u: GridFunction, ball: Ball, subsample: int = 20_000) -> FlatnessCertificate:
    """Minimize the flatness over the direction net, then refine by local bisection.

    The net is scored on a fixed strided subsample of the ball's nodes; the
    eight best net directions are rescored on all nodes and the winner is
    refined by halving a local pattern search down to ``1e-6`` radians.
    """
    x, vals = _ball_samples(u, ball)
    r = ball.radius
    dirs = direction_net(u.dim)
    stride = max(1, vals.size // subsample)
    coarse = _deviation(x[:, ::stride], vals[::stride], dirs, r)
    top = np.argsort(coarse, kind="stable")[:8]
    full = _deviation(x, vals, dirs[top], r)
    best = dirs[top[int(np.argmin(full))]]
    eps = float(full.min())

    p = _dir_to_angles(best)
    step = 2 * np.pi / DIRECTIONS_2D if u.dim == 2 else math.sqrt(4 * np.pi / DIRECTIONS_3D)
    while step > 1e-6:
        moved = False
        for axis in range(p.size):
            for sgn in (1.0, -1.0):
                q = p.copy()
                q[axis] += sgn * step
                e = float(_deviation(x, vals, _angles_to_dir(q)[None, :], r)[0])
                if e < eps:
                    p, eps, moved = q, e, True
        if not moved:
            step *= 0.5
    nu = _angles_to_dir(p)
    eps = max(eps, _pole_deviation(u, ball, nu))
    return FlatnessCertificate(r, tuple(nu), eps, ball.center)


# -- free boundary -------------------------------------------------------------------------


@dataclass
class FreeBoundary:
    """Sub-grid points where ``u`` crosses the level ``threshold`` along grid edges."""

    points: NDArray[np.float64]
    normals: NDArray[np.float64]
    edges: NDArray[np.int64]
    threshold: float
    h: float
    adjacency: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    def within(self, ball: Ball) -> "FreeBoundary":
        c = np.asarray(ball.center)
        keep = np.linalg.norm(self.points - c, axis=1) < ball.radius
        index = -np.ones(len(self.points), dtype=np.int64)
        index[keep] = np.arange(int(keep.sum()))
        adj = [(int(index[a]), int(index[b])) for a, b in self.adjacency if keep[a] and keep[b]]
        return FreeBoundary(self.points[keep], self.normals[keep], self.edges[keep], self.threshold, self.h, adj)

    def distance_to(self, point: Sequence[float]) -> float:
        if len(self.points) == 0:
            return math.inf
        return float(np.min(np.linalg.norm(self.points - np.asarray(point, dtype=float), axis=1)))

    def straddles(self, u: GridFunction) -> bool:
        """Every point's edge has one endpoint above and one at or below the threshold."""
        flat = u.values.ravel()
        a, b = flat[self.edges[:, 0]], flat[self.edges[:, 1]]
        return bool(np.all((a > self.threshold) != (b > self.threshold)))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            dim = self.points.shape[1] if self.points.ndim == 2 else 2
            w.writerow([f"x{i + 1}" for i in range(dim)] + [f"n{i + 1}" for i in range(dim)])
            for p, q in zip(self.points, self.normals):
                w.writerow([repr(float(v)) for v in p] + [repr(float(v)) for v in q])


def extract_free_boundary(u: GridFunction, ball: Ball | None = None, threshold: float | None = None) -> FreeBoundary:
    """Crossings of ``threshold`` (default ``h/2``) along grid edges, linearly interpolated.

    Two points are adjacent when their edges bound a common cell.  Normals are
    the normalized gradient of the cell next to the edge, pointing into the
    positivity set.
    """
    grid = u.grid
    thr = 0.5 * grid.h if threshold is None else threshold
    vals = u.values
    above = vals > thr
    idx = np.arange(vals.size).reshape(grid.shape)
    grad = cell_gradient(u)
    pts, nrm, edges, cell_of = [], [], [], []
    for d in range(grid.dim):
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[d] = slice(None, -1)
        hi[d] = slice(1, None)
        cross = above[tuple(lo)] != above[tuple(hi)]
        ia = idx[tuple(lo)][cross]
        ib = idx[tuple(hi)][cross]
        va, vb = vals.ravel()[ia], vals.ravel()[ib]
        frac = (thr - va) / (vb - va)
        base = np.stack(np.unravel_index(ia, grid.shape))
        coords = grid.lo[:, None] + grid.h * base.astype(float)
        coords[d] += grid.h * frac
        pts.append(coords.T)
        edges.append(np.stack([ia, ib], axis=1))
        # a cell containing this edge, clipped to the valid cell range
        cidx = np.minimum(base, (np.array(grid.cell_shape) - 1)[:, None])
        g = grad[(slice(None),) + tuple(cidx)]
        norm = np.linalg.norm(g, axis=0)
        safe = np.where(norm > 0, norm, 1.0)
        nrm.append((g / safe).T)
        cell_of.append(base)
    points = np.concatenate(pts) if pts else np.zeros((0, grid.dim))
    normals = np.concatenate(nrm) if nrm else np.zeros((0, grid.dim))
    edge_arr = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    adjacency = _adjacency(grid, edge_arr)
    fb = FreeBoundary(points, normals, edge_arr, thr, grid.h, adjacency)
    return fb.within(ball) if ball is not None else fb


def _adjacency(grid: Grid, edges: NDArray[np.int64]) -> list[tuple[int, int]]:
    """Pairs of crossing edges that bound a common cell."""
    if len(edges) == 0:
        return []
    n = grid.dim
    cells_of: dict[tuple[int, ...], list[int]] = {}
    a = np.stack(np.unravel_index(edges[:, 0], grid.shape), axis=1)
    b = np.stack(np.unravel_index(edges[:, 1], grid.shape), axis=1)
    axis = np.argmax(b - a, axis=1)
    for k in range(len(edges)):
        d = int(axis[k])
        others = [o for o in range(n) if o != d]
        for shift in np.ndindex(*(2,) * (n - 1)):
            cell = a[k].copy()
            ok = True
            for o, s in zip(others, shift):
                cell[o] -= s
                if cell[o] < 0 or cell[o] >= grid.cell_shape[o]:
                    ok = False
            if ok and cell[d] < grid.cell_shape[d]:
                cells_of.setdefault(tuple(int(c) for c in cell), []).append(k)
    pairs = set()
    for members in cells_of.values():
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                pairs.add((members[i], members[j]))
    return sorted(pairs)


@dataclass(frozen=True)
class HausdorffEstimate:
    dimension: float
    content: float
    sizes: tuple[float, ...]
    counts: tuple[float, ...]

    def to_json(self) -> dict:
        return {"dimension": self.dimension, "content": self.content, "sizes": list(self.sizes), "counts": list(self.counts)}


def box_counts(points: NDArray[np.float64], sizes: Sequence[float], ball: Ball | None = None, shifts: int = 4) -> list[float]:
    """Number of boxes of each size meeting ``points``, averaged over ``shifts**n`` box offsets.

    With a ``ball`` only boxes whose center lies in it are counted, so a curve
    crossing the ball has no end effect: the average count is the area of the
    curve's box-width tube inside the ball divided by ``s**n``.
    """
    n = points.shape[1]
    # the golden-ratio phase keeps box edges off the dyadic mesh nodes
    phase = (np.arange(shifts) + (math.sqrt(5) - 1) / 2) / shifts
    offsets = np.stack(np.meshgrid(*[phase] * n, indexing="ij"), axis=-1).reshape(-1, n)
    out = []
    for s in sizes:
        total = 0
        for o in offsets:
            keys = np.unique(np.floor(points / s + o).astype(np.int64), axis=0)
            if ball is not None:
                centers = (keys - o + 0.5) * s
                keys = keys[np.linalg.norm(centers - np.asarray(ball.center), axis=1) < ball.radius]
            total += len(keys)
        out.append(total / len(offsets))
    return out


def minkowski_content(points: NDArray[np.float64], s: float, h: float, ball: Ball | None = None) -> float:
    """``|{dist(x, FB) < s}| / (2 s)`` (the (n-1)-dimensional content), on an ``h/4`` lattice."""
    if len(points) == 0:
        return 0.0
    n = points.shape[1]
    step = h / 4
    lo = np.floor((points.min(axis=0) - s) / step) * step
    hi = np.ceil((points.max(axis=0) + s) / step) * step
    axes = [np.arange(a, b + step / 2, step) + step / 2 for a, b in zip(lo, hi)]
    tree = cKDTree(points)
    total = 0
    # sweep along the first axis to keep memory bounded
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, n - 1)
    for x0 in axes[0]:
        q = np.column_stack([np.full(len(rest), x0), rest])
        if ball is not None:
            q = q[np.linalg.norm(q - np.asarray(ball.center), axis=1) < ball.radius]
        if len(q) == 0:
            continue
        d, _ = tree.query(q, distance_upper_bound=s)
        total += int(np.count_nonzero(d < s))
    return total * step**n / (2 * s)


def _densified(fb: FreeBoundary, k: int) -> NDArray[np.float64]:
    """The points plus ``k - 1`` interior points on each segment joining adjacent points."""
    if not fb.adjacency:
        return fb.points
    pairs = np.asarray(fb.adjacency)
    a, b = fb.points[pairs[:, 0]], fb.points[pairs[:, 1]]
    t = (np.arange(1, k) / k)[:, None, None]
    return np.concatenate([fb.points, (a[None] + t * (b - a)[None]).reshape(-1, fb.points.shape[1])])


def hausdorff_estimate(fb: FreeBoundary, ball: Ball | None = None) -> HausdorffEstimate:
    """Box-counting dimension over dyadic sizes in ``[4h, 1/4]`` and the content at ``4h``.

    Boxes are counted with their centers in ``ball`` (see :func:`box_counts`),
    so the free boundary should be extracted beyond the ball.

    The content is the Minkowski content of the extracted point set at tube
    radius ``4h``; for a curve it estimates the length.
    """
    sub = fb.within(ball) if ball is not None else fb
    if len(sub) == 0:
        raise PreconditionError("free boundary", "no free-boundary points in the region")
    sizes = []
    s = 0.25
    while s >= 4 * fb.h - 1e-15:
        sizes.append(s)
        s /= 2
    if len(sizes) < 2:
        raise DomainError("grid too coarse for box counting between 4h and 1/4")
    counts = box_counts(_densified(fb, 4), sizes, ball)
    slope = np.polyfit(np.log(sizes), np.log(counts), 1)[0]
    content = minkowski_content(sub.points, 4 * fb.h, fb.h, ball)
    return HausdorffEstimate(float(-slope), float(content), tuple(sizes), tuple(counts))


def c1alpha_fit(fb: FreeBoundary, window: Ball, alpha: float) -> float:
    """Hölder seminorm of the slope of the residual after a least-squares graph fit.

    Points in the window are written as a graph over the tangent plane of a
    principal-axis fit.  Local slopes come from linear fits over neighborhoods
    of radius ``4h``; the seminorm is ``max |slope_i - slope_j| / |t_i - t_j|^alpha``
    over pairs at least ``8h`` apart.
    """
    sub = fb.within(window)
    if len(sub) < 4:
        raise PreconditionError("free boundary", "fewer than four points in the window")
    p = sub.points - sub.points.mean(axis=0)
    _, _, vt = np.linalg.svd(p, full_matrices=False)
    tangent, normal = vt[:-1], vt[-1]
    t = p @ tangent.T
    s = p @ normal
    A = np.column_stack([np.ones(len(t)), t])
    coef, *_ = np.linalg.lstsq(A, s, rcond=None)
    resid = s - A @ coef
    tree = cKDTree(t)
    rad = 4 * fb.h
    slopes = np.zeros_like(t)
    for i, nb in enumerate(tree.query_ball_point(t, rad)):
        if len(nb) <= t.shape[1]:
            continue
        B = np.column_stack([np.ones(len(nb)), t[nb] - t[i]])
        c, *_ = np.linalg.lstsq(B, resid[nb], rcond=None)
        slopes[i] = c[1:]
    # thin to keep the pairwise search small
    keep = np.arange(0, len(t), max(1, len(t) // 800))
    tk, sk = t[keep], slopes[keep]
    dt = np.linalg.norm(tk[:, None, :] - tk[None, :, :], axis=2)
    ds = np.linalg.norm(sk[:, None, :] - sk[None, :, :], axis=2)
    far = dt >= 8 * fb.h
    if not far.any():
        return 0.0
    return float(np.max(ds[far] / dt[far] ** alpha))


# -- epsilon rescaling and the linearized problem -------------------------------------------


def rotation_to(nu: Sequence[float]) -> NDArray[np.float64]:
    """Orthogonal ``Q`` with ``Q e_n = nu`` (a reflection-free Householder pair)."""
    nu = np.asarray(nu, dtype=float)
    nu = nu / np.linalg.norm(nu)
    n = nu.size
    e = np.zeros(n)
    e[-1] = 1.0
    if np.allclose(nu, e, atol=1e-15):
        return np.eye(n)
    if n == 2:
        c, s = nu[1], nu[0]
        return np.array([[c, s], [-s, c]])
    v = e + nu
    if np.linalg.norm(v) < 1e-12:
        return np.diag([1.0] * (n - 2) + [-1.0, -1.0])
    H = np.eye(n) - 2 * np.outer(v, v) / (v @ v)
    F = np.eye(n)
    F[-1, -1] = -1.0
    return H @ F


@dataclass
class EpsilonRescaled:
    """``(u - x_n)/eps`` in coordinates where ``nu = e_n``, defined where ``u > 0``."""

    grid: Grid
    values: NDArray[np.float64]
    defined: NDArray[np.bool_]
    eps: float
    direction: tuple[float, ...]


def _rotated_samples(u: GridFunction, nu: Sequence[float], half_width: float, center: Sequence[float] | None) -> tuple[Grid, NDArray]:
    h = u.h
    k = int(math.ceil(half_width / h)) + 1
    local = box_grid(k * h, h, u.dim)
    Q = rotation_to(nu)
    c = np.zeros(u.dim) if center is None else np.asarray(center, dtype=float)
    pts = np.tensordot(Q, local.nodes, axes=(1, 0)) + c.reshape((-1,) + (1,) * u.dim)
    flat = pts.reshape(u.dim, -1)
    inside = np.all((flat >= u.grid.lo[:, None] - 1e-12) & (flat <= u.grid.hi[:, None] + 1e-12), axis=0)
    vals = np.full(flat.shape[1], np.nan)
    vals[inside] = interpolate(u, np.clip(flat[:, inside], u.grid.lo[:, None], u.grid.hi[:, None]))
    return local, vals.reshape(local.shape)


def epsilon_rescale(u: GridFunction, eps: float, nu: Sequence[float] | None = None, center: Sequence[float] | None = None) -> EpsilonRescaled:
    if not eps >= 4 * u.h:
        raise ValidationError(f"eps={eps} is below 4h={4 * u.h}; the rescaling is not resolvable", field="flatness.eps")
    nu = np.eye(u.dim)[-1] if nu is None else np.asarray(nu, dtype=float)
    grid, v = _rotated_samples(u, nu, 1.0, center)
    xn = grid.nodes[-1]
    inside = np.sqrt(np.sum(grid.nodes**2, axis=0)) <= 1.0 + 1e-12
    defined = inside & np.isfinite(v) & (v > 0)
    vals = np.where(defined, (np.nan_to_num(v) - xn) / eps, 0.0)
    return EpsilonRescaled(grid, vals, defined, float(eps), tuple(float(c) for c in nu / np.linalg.norm(nu)))


@dataclass(frozen=True)
class LinearizationReport:
    residual: float
    flatness: float
    diagnostics: SolveDiagnostics


def linearization_residual(
    u: GridFunction, eps: float, nu: Sequence[float] | None = None, center: Sequence[float] | None = None
) -> LinearizationReport:
    """Distance between ``(u - x_n)/eps`` and the Neumann half-ball solution with its boundary values.

    The half-ball has radius 1/2; the curved-boundary data is ``(u - x_n)/eps``
    evaluated with the same formula wherever ``u`` vanishes.  The residual is
    the max over ``B_{1/4}^+ cap {x_n > 2 eps} cap {u > 0}``.
    """
    nu = np.eye(u.dim)[-1] if nu is None else np.asarray(nu, dtype=float)
    c = (0.0,) * u.dim if center is None else tuple(center)
    f = flatness(u, Ball(c, 1.0), nu)
    if f > eps + 10 * u.h:
        raise PreconditionError("flatness", f"flatness {f:.4g} exceeds eps={eps}")
    resc = epsilon_rescale(u, eps, nu, center)
    grid = resc.grid
    _, v = _rotated_samples(u, nu, 1.0, center)
    data = (np.nan_to_num(v) - grid.nodes[-1]) / eps
    sol, diag = neumann_halfball_solve(GridFunction(grid, data, "signed"), radius=0.5)
    r = np.sqrt(np.sum(grid.nodes**2, axis=0))
    zone = (r <= 0.25) & (grid.nodes[-1] > 2 * eps) & resc.defined
    if not zone.any():
        raise PreconditionError("flatness", "no positivity nodes in B_1/4 above x_n = 2 eps")
    res = float(np.max(np.abs(resc.values - sol.values)[zone]))
    return LinearizationReport(res, f, diag)


# -- improvement of flatness -----------------------------------------------------------------


@dataclass
class FlatnessStep:
    index: int
    certificate: FlatnessCertificate
    factor: float | None
    bound: float | None
    passed: bool | None
    sigma_k: float
    eps_power: float


@dataclass
class FlatnessIteration:
    steps: list[FlatnessStep]
    eta: float
    alpha: float

    @property
    def certificates(self) -> list[FlatnessCertificate]:
        return [s.certificate for s in self.steps]

    @property
    def consecutive_passes(self) -> int:
        best = run = 0
        for s in self.steps[1:]:
            run = run + 1 if s.passed else 0
            best = max(best, run)
        return best

    @property
    def all_passed(self) -> bool:
        return all(s.passed for s in self.steps[1:])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "scale", "deviation", "factor", "bound", "passed", "sigma_k", "eps_power"] + [f"nu{i + 1}" for i in range(len(self.steps[0].certificate.direction))])
            for s in self.steps:
                c = s.certificate
                w.writerow(
                    [s.index, repr(c.scale), repr(c.deviation), "" if s.factor is None else repr(s.factor), "" if s.bound is None else repr(s.bound), "" if s.passed is None else int(s.passed), repr(s.sigma_k), repr(s.eps_power)]
                    + [repr(v) for v in c.direction]
                )

    def to_json(self) -> dict:
        return {"eta": self.eta, "alpha": self.alpha, "consecutive_passes": self.consecutive_passes, "certificates": [c.to_json() for c in self.certificates]}


def fb_tolerance(u: GridFunction) -> float:
    """Distance within which a point counts as lying on the extracted free boundary.

    A cell diagonal plus the shift caused by extracting at level ``h/2``.
    """
    return u.h * (math.sqrt(u.dim) + 0.5)


def _require_on_free_boundary(u: GridFunction, center: Sequence[float]) -> None:
    fb = extract_free_boundary(u, Ball(tuple(center), 4 * u.h * u.dim) if u.grid.contains(center, 4 * u.h * u.dim) else None)
    if fb.distance_to(center) > fb_tolerance(u):
        raise PreconditionError("free boundary", f"{tuple(center)} is not on the extracted free boundary")


def improve_flatness(
    u: GridFunction,
    eps: float,
    alpha: float,
    eta: float = 1 / 8,
    nu: Sequence[float] | None = None,
    center: Sequence[float] | None = None,
    radius: float = 1.0,
    sigma: float | None = None,
) -> FlatnessCertificate:
    """Best half-plane fit at scale ``eta*radius`` given ``eps``-flatness at ``radius``."""
    n = u.dim
    c = (0.0,) * n if center is None else tuple(float(x) for x in center)
    nu = np.eye(n)[-1] if nu is None else np.asarray(nu, dtype=float)
    _require_on_free_boundary(u, c)
    f = flatness(u, Ball(c, radius), nu)
    if f > eps:
        raise PreconditionError("flatness", f"flatness {f:.4g} exceeds eps={eps}")
    if sigma is not None and sigma > eps ** (n + 4):
        raise PreconditionError("sigma", f"sigma={sigma} exceeds eps^(n+4)={eps ** (n + 4):.3g}")
    return best_direction(u, Ball(c, eta * radius))


def iterate_flatness(
    u: GridFunction,
    eps0: float | None = None,
    alpha: float = 0.25,
    eta: float = 1 / 8,
    nu: Sequence[float] | None = None,
    center: Sequence[float] | None = None,
    radius: float = 1.0,
    kappa: float = 0.0,
    beta: float = 1.0,
    slack: float = 20.0,
) -> FlatnessIteration:
    """Best half-plane fits at scales ``radius * eta^k`` down to the mesh floor ``16h``.

    Step 0 measures ``u`` against ``nu`` (default ``e_n``).  Measuring in
    ``B_{r eta^k}`` on the original grid is the same as rescaling by
    ``r eta^k`` first, since the rescaled nodes coincide with source nodes.
    Step ``k+1`` passes when ``eps_{k+1}/eps_k <= eta^(1+alpha) + slack*h_{k+1}/eps_k``
    with ``h_{k+1} = h / r_{k+1}``, the spacing of the grid rescaled to the unit ball.
    The log also records ``sigma_k = kappa eta^(k beta)`` next to ``eps_k^(n+4)``.
    """
    n = u.dim
    c = (0.0,) * n if center is None else tuple(float(x) for x in center)
    nu = np.eye(n)[-1] if nu is None else np.asarray(nu, dtype=float)
    _require_on_free_boundary(u, c)
    e0 = flatness(u, Ball(c, radius), nu)
    if eps0 is not None and e0 > eps0:
        raise PreconditionError("flatness", f"flatness {e0:.4g} exceeds eps0={eps0}")
    steps = [FlatnessStep(0, FlatnessCertificate(radius, tuple(nu), e0, c), None, None, None, kappa, e0 ** (n + 4))]
    r = radius
    k = 0
    target = eta ** (1 + alpha)
    while eta * r >= MESH_FLOOR * u.h - 1e-12:
        r *= eta
        k += 1
        cert = best_direction(u, Ball(c, r))
        prev = steps[-1].certificate.deviation
        if prev > 0:
            factor = cert.deviation / prev
            bound = target + slack * (u.h / r) / prev
            passed = factor <= bound
        else:
            factor, bound, passed = 0.0, math.inf, True
        steps.append(FlatnessStep(k, cert, factor, bound, passed, kappa * eta ** (k * beta), cert.deviation ** (n + 4)))
    return FlatnessIteration(steps, eta, alpha)


def certificate_json(certs: Sequence[FlatnessCertificate]) -> str:
    return json.dumps([c.to_json() for c in certs], indent=2, sort_keys=True)
