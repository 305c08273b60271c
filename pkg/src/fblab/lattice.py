"""Uniform grids, grid functions and the discrete integrals built on them.

Conventions used throughout the package:

* nodes are indexed ``ij``-style, axis ``d`` of ``values`` is coordinate ``x_{d+1}``;
* a *cell* is the hypercube spanned by nodes ``k`` and ``k + 1`` on every axis,
  and belongs to a ball when its center does;
* the squared gradient of a cell is the average, over the ``2**(n-1)`` parallel
  edges of each direction, of the squared forward differences.  Summed over a
  region this is the 5-point (7-point) Dirichlet form, so discrete harmonic
  functions are its exact minimizers;
* each of the ``2**n`` corners of a cell owns ``2**-n`` of its volume for the
  positivity term, so a node is positive or not as a whole.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import DomainError, NonFiniteError, SignError, ValidationError

ROUNDOFF_CLAMP = 1e-14
_SPACING_RTOL = 1e-12
_SNAP = 1e-9

Role = str  # "u" for candidate minimizers (nonnegative) or "signed"


@dataclass(frozen=True)
class Grid:
    bounds: tuple[tuple[float, float], ...]
    h: float
    shape: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def lo(self) -> NDArray[np.float64]:
        return np.array([b[0] for b in self.bounds])

    @property
    def hi(self) -> NDArray[np.float64]:
        return np.array([b[1] for b in self.bounds])

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return tuple(s - 1 for s in self.shape)

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @cached_property
    def axes(self) -> tuple[NDArray[np.float64], ...]:
        return tuple(lo + self.h * np.arange(n) for (lo, _), n in zip(self.bounds, self.shape))

    @cached_property
    def nodes(self) -> NDArray[np.float64]:
        """Node coordinates, shape ``(dim, *shape)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def cell_centers(self) -> NDArray[np.float64]:
        mids = tuple(a[:-1] + 0.5 * self.h for a in self.axes)
        return np.stack(np.meshgrid(*mids, indexing="ij"))

    def fractional_index(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        """Map points of shape ``(dim, ...)`` to fractional node indices, snapping near-integers."""
        pts = np.asarray(points, dtype=float)
        s = (pts - self.lo.reshape((-1,) + (1,) * (pts.ndim - 1))) / self.h
        k = np.rint(s)
        return np.where(np.abs(s - k) < _SNAP, k, s)

    def nearest_index(self, point: Sequence[float]) -> tuple[int, ...]:
        s = self.fractional_index(np.asarray(point, dtype=float))
        idx = tuple(int(v) for v in np.rint(s))
        if any(i < 0 or i >= n for i, n in zip(idx, self.shape)):
            raise DomainError(f"point {tuple(point)} lies outside the grid")
        return idx

    def contains(self, point: Sequence[float], radius: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        tol = _SPACING_RTOL * max(1.0, float(np.max(np.abs(self.hi - self.lo))))
        return bool(np.all(p - radius >= self.lo - tol) and np.all(p + radius <= self.hi + tol))

    def to_json(self) -> dict:
        return {"dim": self.dim, "bounds": [list(b) for b in self.bounds], "h": self.h, "shape": list(self.shape)}


def make_grid(bounds: Sequence[Sequence[float]], h: float) -> Grid:
    """Build a uniform grid; every side must be an integer multiple of ``h``."""
    if not (h > 0 and np.isfinite(h)):
        raise ValidationError(f"spacing must be positive, got {h}", field="grid.h")
    bnds = tuple((float(lo), float(hi)) for lo, hi in bounds)
    if len(bnds) not in (2, 3):
        raise ValidationError(f"only 2D and 3D grids are supported, got dim={len(bnds)}", field="grid.bounds")
    shape = []
    for axis, (lo, hi) in enumerate(bnds):
        side = hi - lo
        if side <= 0:
            raise ValidationError(f"axis {axis}: empty interval [{lo}, {hi}]", field="grid.bounds")
        cells = round(side / h)
        if cells < 1:
            raise ValidationError(f"axis {axis}: spacing {h} exceeds side length {side}", field="grid.h")
        if abs(cells * h - side) > _SPACING_RTOL * side:
            raise ValidationError(f"axis {axis}: side length {side} is not a multiple of h={h}", field="grid.h")
        shape.append(cells + 1)
    return Grid(bnds, float(h), tuple(shape))


def box_grid(half_width: float, h: float, dim: int = 2) -> Grid:
    """Grid on the cube ``[-half_width, half_width]^dim``."""
    return make_grid([(-half_width, half_width)] * dim, h)


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError(f"ball radius must be positive, got {self.radius}", field="ball.radius")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def unit(cls, dim: int = 2, radius: float = 1.0) -> "Ball":
        return cls((0.0,) * dim, radius)

    def scaled(self, factor: float) -> "Ball":
        return Ball(self.center, self.radius * factor)

    def to_json(self) -> dict:
        return {"center": list(self.center), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Immutable nodal field on a grid.

    ``role="u"`` marks a candidate for the Bernoulli problem: values must be
    nonnegative, and negative round-off below ``ROUNDOFF_CLAMP`` is clamped.
    """

    grid: Grid
    values: NDArray[np.float64]
    role: Role = "u"

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.shape != self.grid.shape:
            raise ValidationError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise NonFiniteError(f"non-finite value at node {tuple(int(i) for i in bad)}")
        if self.role not in ("u", "signed"):
            raise ValidationError(f"unknown role {self.role!r}")
        if self.role == "u":
            neg = vals < 0
            if np.any(neg):
                worst = float(vals.min())
                if worst < -ROUNDOFF_CLAMP:
                    bad = np.unravel_index(int(np.argmin(vals)), vals.shape)
                    raise SignError(f"u-role value {worst:.3e} < 0 at node {tuple(int(i) for i in bad)}")
                vals[neg] = 0.0
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def dim(self) -> int:
        return self.grid.dim

    def with_values(self, values: NDArray[np.float64], role: Role | None = None) -> "GridFunction":
        return GridFunction(self.grid, values, self.role if role is None else role)

    def as_signed(self) -> "GridFunction":
        return GridFunction(self.grid, self.values, "signed")

    def __call__(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        return interpolate(self, points)

    def at(self, point: Sequence[float]) -> float:
        return float(interpolate(self, np.asarray(point, dtype=float)))


def sample(f: Callable[[NDArray[np.float64]], NDArray[np.float64]] | float, grid: Grid, role: Role = "u") -> GridFunction:
    """Evaluate ``f`` (called with coordinates of shape ``(dim, *shape)``) at every node."""
    if callable(f):
        vals = np.asarray(f(grid.nodes), dtype=float)
        vals = np.broadcast_to(vals, grid.shape)
    else:
        vals = np.full(grid.shape, float(f))
    return GridFunction(grid, vals, role)


def interpolate(u: GridFunction, points: NDArray[np.float64]) -> NDArray[np.float64]:
    """Multilinear interpolation at points of shape ``(dim, ...)``; exact at nodes."""
    grid = u.grid
    pts = np.asarray(points, dtype=float)
    s = grid.fractional_index(pts)
    out_shape = s.shape[1:]
    s = s.reshape(grid.dim, -1)
    for d in range(grid.dim):
        if np.any(s[d] < 0) or np.any(s[d] > grid.shape[d] - 1):
            raise DomainError("interpolation point outside the grid")
    base = np.minimum(np.floor(s).astype(np.int64), np.array(grid.shape)[:, None] - 2)
    base = np.maximum(base, 0)
    frac = s - base
    result = np.zeros(s.shape[1])
    for corner in np.ndindex(*(2,) * grid.dim):
        w = np.ones(s.shape[1])
        idx = []
        for d, c in enumerate(corner):
            w = w * (frac[d] if c else 1.0 - frac[d])
            idx.append(base[d] + c)
        nz = w != 0.0
        result[nz] += w[nz] * u.values[tuple(i[nz] for i in idx)]
    return result.reshape(out_shape)


# -- regions ---------------------------------------------------------------------------


def require_inside(grid: Grid, ball: Ball) -> None:
    if len(ball.center) != grid.dim:
        raise DomainError(f"ball center has dim {len(ball.center)}, grid has dim {grid.dim}")
    if not grid.contains(ball.center, ball.radius):
        raise DomainError(f"ball {ball.center} r={ball.radius} escapes grid bounds {grid.bounds}")


def _dist(coords: NDArray[np.float64], center: Sequence[float]) -> NDArray[np.float64]:
    c = np.asarray(center, dtype=float).reshape((-1,) + (1,) * (coords.ndim - 1))
    return np.sqrt(np.sum((coords - c) ** 2, axis=0))


def cell_mask(grid: Grid, ball: Ball | None) -> NDArray[np.bool_]:
    """Cells whose center lies in the open ball (all cells when ``ball`` is None)."""
    if ball is None:
        return np.ones(grid.cell_shape, dtype=bool)
    require_inside(grid, ball)
    return _dist(grid.cell_centers, ball.center) < ball.radius


def node_mask(grid: Grid, ball: Ball, closed: bool = True) -> NDArray[np.bool_]:
    d = _dist(grid.nodes, ball.center)
    tol = 1e-12 * max(1.0, ball.radius)
    return d <= ball.radius + tol if closed else d < ball.radius - tol


def node_distance(grid: Grid, center: Sequence[float]) -> NDArray[np.float64]:
    return _dist(grid.nodes, center)


def cells_to_nodes(cells: NDArray[np.float64]) -> NDArray[np.float64]:
    """Sum of cell values over the ``2**n`` cells sharing each node."""
    out = cells
    for axis in range(cells.ndim):
        out = _pair_sum(np.pad(out, [(1, 1) if a == axis else (0, 0) for a in range(cells.ndim)]), axis)
    return out


def free_nodes(cells: NDArray[np.bool_]) -> NDArray[np.bool_]:
    """Nodes all of whose surrounding cells belong to the mask."""
    count = cells_to_nodes(cells.astype(np.int32))
    return count == 2**cells.ndim


def _pair_sum(a: NDArray, axis: int) -> NDArray:
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return a[tuple(lo)] + a[tuple(hi)]


def _average_other_axes(a: NDArray, axis: int) -> NDArray:
    for other in range(a.ndim):
        if other != axis:
            a = 0.5 * _pair_sum(a, other)
    return a


def forward_differences(values: NDArray[np.float64], axis: int) -> NDArray[np.float64]:
    return np.diff(values, axis=axis)


def cell_gradient(u: GridFunction) -> NDArray[np.float64]:
    """Per-cell gradient vector, shape ``(dim, *cell_shape)``."""
    return np.stack([_average_other_axes(np.diff(u.values, axis=d), d) for d in range(u.dim)]) / u.h


def cell_gradient_norm(u: GridFunction) -> NDArray[np.float64]:
    return np.sqrt(np.sum(cell_gradient(u) ** 2, axis=0))


def cell_grad_sq(u: GridFunction) -> NDArray[np.float64]:
    """Per-cell squared gradient (edge-averaged), the Dirichlet energy density."""
    total = np.zeros(u.grid.cell_shape)
    for d in range(u.dim):
        total += _average_other_axes(np.diff(u.values, axis=d) ** 2, d)
    return total / u.h**2


def cell_positive_fraction(u: GridFunction) -> NDArray[np.float64]:
    pos = (u.values > 0).astype(float)
    for d in range(u.dim):
        pos = 0.5 * _pair_sum(pos, d)
    return pos


def cell_measure(grid: Grid, ball: Ball | None) -> float:
    return float(np.count_nonzero(cell_mask(grid, ball))) * grid.cell_volume


def dirichlet_energy(u: GridFunction, ball: Ball | None = None) -> float:
    mask = cell_mask(u.grid, ball)
    return float(np.sum(cell_grad_sq(u)[mask])) * u.grid.cell_volume


def positivity_measure(u: GridFunction, ball: Ball | None = None) -> float:
    mask = cell_mask(u.grid, ball)
    return float(np.sum(cell_positive_fraction(u)[mask])) * u.grid.cell_volume


def zero_measure(u: GridFunction, ball: Ball | None = None) -> float:
    mask = cell_mask(u.grid, ball)
    return float(np.sum(1.0 - cell_positive_fraction(u)[mask])) * u.grid.cell_volume


def max_cell_gradient(u: GridFunction, cells: NDArray[np.bool_]) -> float:
    g = cell_gradient_norm(u)[cells]
    return float(g.max()) if g.size else 0.0


# -- GFN: JSON sidecar + raw little-endian float64, row-major ----------------------------


def write_gfn(u: GridFunction, path: str | Path) -> tuple[Path, Path]:
    """Write ``<path>.gfn`` (raw data) and ``<path>.gfn.json`` (metadata)."""
    base = Path(path)
    if base.suffix == ".gfn":
        base = base.with_suffix("")
    raw = base.with_name(base.name + ".gfn")
    meta = base.with_name(base.name + ".gfn.json")
    header = {
        "format": "GFN",
        "version": 1,
        "dim": u.dim,
        "bounds": [list(b) for b in u.grid.bounds],
        "h": u.grid.h,
        "shape": list(u.grid.shape),
        "role": u.role,
        "dtype": "<f8",
        "order": "C",
    }
    raw.write_bytes(np.ascontiguousarray(u.values, dtype="<f8").tobytes(order="C"))
    meta.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return raw, meta


def read_gfn(path: str | Path) -> GridFunction:
    base = Path(path)
    name = base.name
    for suffix in (".gfn.json", ".gfn"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    raw = base.with_name(name + ".gfn")
    meta = json.loads(base.with_name(name + ".gfn.json").read_text())
    if meta.get("format") != "GFN":
        raise ValidationError("not a GFN sidecar", field="format")
    shape = tuple(meta["shape"])
    grid = Grid(tuple((float(a), float(b)) for a, b in meta["bounds"]), float(meta["h"]), shape)
    data = np.frombuffer(raw.read_bytes(), dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise ValidationError(f"GFN payload has {data.size} values, expected {int(np.prod(shape))}")
    return GridFunction(grid, data.reshape(shape).astype(np.float64), meta.get("role", "u"))
