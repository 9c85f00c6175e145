"""Rectangular grids, sampled potentials and boundary functions.

Interior nodes sit at ``(i*hx, j*hy)`` for ``i = 1..nx`` and ``j = 1..ny`` and
are flattened row-major, ``k = (j-1)*nx + (i-1)``.  Boundary samples are the
projections of the interior grid lines onto the four edges; corners are left
out because the outward normal is undefined there.  Sample order is

    bottom (left -> right), right (bottom -> top),
    top (right -> left),    left (top -> bottom).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BoundViolation, GridMismatch, ValidationError

EDGES = ("bottom", "right", "top", "left")
OUTWARD_NORMALS = {
    "bottom": (0.0, -1.0),
    "right": (1.0, 0.0),
    "top": (0.0, 1.0),
    "left": (-1.0, 0.0),
}


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    Lx: float
    Ly: float
    nx: int
    ny: int

    # derived boundary tables, filled in __post_init__
    edge: np.ndarray = field(init=False, repr=False, compare=False)
    bx: np.ndarray = field(init=False, repr=False, compare=False)
    by: np.ndarray = field(init=False, repr=False, compare=False)
    arclength: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)
    first: np.ndarray = field(init=False, repr=False, compare=False)
    second: np.ndarray = field(init=False, repr=False, compare=False)
    hnormal: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValidationError(f"lengths must be positive, got Lx={self.Lx}, Ly={self.Ly}")
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 2 or self.ny < 2:
            raise ValidationError(f"need integer nx, ny >= 2, got nx={self.nx}, ny={self.ny}")
        object.__setattr__(self, "Lx", float(self.Lx))
        object.__setattr__(self, "Ly", float(self.Ly))
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        self._build_boundary()

    # -- geometry -----------------------------------------------------------
    @property
    def hx(self) -> float:
        return self.Lx / (self.nx + 1)

    @property
    def hy(self) -> float:
        return self.Ly / (self.ny + 1)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def n_boundary(self) -> int:
        return 2 * (self.nx + self.ny)

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    @property
    def perimeter(self) -> float:
        return 2.0 * (self.Lx + self.Ly)

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.Lx, self.Ly))

    @property
    def x(self) -> np.ndarray:
        return self.hx * np.arange(1, self.nx + 1)

    @property
    def y(self) -> np.ndarray:
        return self.hy * np.arange(1, self.ny + 1)

    def mesh(self):
        """Interior coordinates as flat arrays ``(X, Y)`` in flat-index order."""
        X, Y = np.meshgrid(self.x, self.y)
        return X.ravel(), Y.ravel()

    def index(self, i: int, j: int) -> int:
        """Flat index of the interior node (i, j), both 0-based."""
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise IndexError((i, j))
        return j * self.nx + i

    def unindex(self, k: int):
        return k % self.nx, k // self.nx

    def as_field(self, values):
        """Reshape a flat interior vector to ``(ny, nx)``."""
        return np.asarray(values).reshape(self.ny, self.nx)

    def edge_mask(self, *edges: str) -> np.ndarray:
        for e in edges:
            if e not in EDGES:
                raise ValidationError(f"unknown edge {e!r}")
        return np.isin(self.edge, [EDGES.index(e) for e in edges])

    def edge_slice(self, name: str) -> slice:
        nx, ny = self.nx, self.ny
        starts = {"bottom": 0, "right": nx, "top": nx + ny, "left": 2 * nx + ny}
        lengths = {"bottom": nx, "right": ny, "top": nx, "left": ny}
        return slice(starts[name], starts[name] + lengths[name])

    def _build_boundary(self):
        nx, ny, hx, hy = self.nx, self.ny, self.hx, self.hy
        ix = np.arange(nx)
        jy = np.arange(ny)
        xs = hx * (ix + 1)
        ys = hy * (jy + 1)

        # trapezoid per edge; the half cell next to each excluded corner is
        # folded into the adjacent sample so every edge integrates 1 exactly
        def edge_weights(n, h):
            w = np.full(n, h)
            w[0] += 0.5 * h
            w[-1] += 0.5 * h
            return w

        rows = []
        # bottom: y=0, inward neighbours (i,0),(i,1)
        rows.append((np.zeros(nx, int), xs, np.zeros(nx), xs, edge_weights(nx, hx),
                     ix, ix + nx, np.full(nx, hy)))
        # right: x=Lx, bottom -> top, neighbours (nx-1,j),(nx-2,j)
        rows.append((np.ones(ny, int), np.full(ny, self.Lx), ys, self.Lx + ys,
                     edge_weights(ny, hy), jy * nx + nx - 1, jy * nx + nx - 2,
                     np.full(ny, hx)))
        # top: y=Ly, right -> left
        ixr = ix[::-1]
        rows.append((np.full(nx, 2), xs[::-1], np.full(nx, self.Ly),
                     self.Lx + self.Ly + (self.Lx - xs[::-1]), edge_weights(nx, hx),
                     (ny - 1) * nx + ixr, (ny - 2) * nx + ixr, np.full(nx, hy)))
        # left: x=0, top -> bottom
        jyr = jy[::-1]
        rows.append((np.full(ny, 3), np.zeros(ny), ys[::-1],
                     2 * self.Lx + self.Ly + (self.Ly - ys[::-1]),
                     edge_weights(ny, hy), jyr * nx, jyr * nx + 1, np.full(ny, hx)))
        cols = [np.concatenate(c) for c in zip(*rows)]
        names = ("edge", "bx", "by", "arclength", "weights", "first", "second", "hnormal")
        for name, col in zip(names, cols):
            object.__setattr__(self, name, _frozen(col))

    @property
    def normals(self) -> np.ndarray:
        """Outward unit normal at every boundary sample, shape (n_boundary, 2)."""
        table = np.array([OUTWARD_NORMALS[e] for e in EDGES])
        return table[self.edge]

    def boundary_points(self) -> np.ndarray:
        return np.column_stack([self.bx, self.by])

    def to_dict(self) -> dict:
        return {"Lx": self.Lx, "Ly": self.Ly, "nx": self.nx, "ny": self.ny,
                "hx": self.hx, "hy": self.hy}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(d["Lx"], d["Ly"], d["nx"], d["ny"])


def build_grid(Lx: float, Ly: float, nx: int, ny: int) -> Grid:
    return Grid(Lx, Ly, nx, ny)


@dataclass(frozen=True)
class Potential:
    """Real potential sampled at interior nodes, with certified bound ``sup_bound``.

    ``boundary_values`` optionally holds samples of the same analytic function
    at the boundary nodes; the stability experiment needs them to check that
    two potentials agree on the boundary.
    """

    grid: Grid
    values: np.ndarray
    sup_bound: float
    boundary_values: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.grid.size:
            raise ValidationError(f"potential has {v.size} values, grid has {self.grid.size} nodes")
        if not np.all(np.isfinite(v)):
            raise ValidationError("potential has non-finite values")
        if self.sup_bound < 0:
            raise ValidationError("sup_bound must be >= 0")
        vmax = float(np.max(np.abs(v))) if v.size else 0.0
        if vmax > self.sup_bound * (1 + 1e-12) + 1e-300:
            raise BoundViolation(f"max |q| = {vmax} exceeds bound M = {self.sup_bound}")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "sup_bound", float(self.sup_bound))
        if self.boundary_values is not None:
            b = np.asarray(self.boundary_values, dtype=float).ravel()
            if b.size != self.grid.n_boundary:
                raise ValidationError("boundary_values length does not match the grid")
            object.__setattr__(self, "boundary_values", _frozen(b))

    def __add__(self, c):
        """Shift by a scalar; the bound grows by |c|."""
        c = float(c)
        bv = None if self.boundary_values is None else self.boundary_values + c
        return Potential(self.grid, self.values + c, self.sup_bound + abs(c), bv)

    def __sub__(self, other):
        if isinstance(other, Potential):
            if other.grid != self.grid:
                raise GridMismatch("potentials live on different grids")
            bv = None
            if self.boundary_values is not None and other.boundary_values is not None:
                bv = self.boundary_values - other.boundary_values
            return Potential(self.grid, self.values - other.values,
                             self.sup_bound + other.sup_bound, bv)
        return self + (-float(other))

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.cell_area * np.sum(self.values ** 2)))

    def to_json(self) -> str:
        doc = {"grid": self.grid.to_dict(), "sup_bound": self.sup_bound,
               "values": [float(v) for v in self.values]}
        if self.boundary_values is not None:
            doc["boundary_values"] = [float(v) for v in self.boundary_values]
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Potential":
        doc = json.loads(text)
        grid = Grid.from_dict(doc["grid"])
        return cls(grid, np.array(doc["values"], float), doc["sup_bound"],
                   doc.get("boundary_values"))


def sample_potential(func: Callable, grid: Grid, M: float) -> Potential:
    """Evaluate ``func(x, y)`` (vectorised) on the grid and certify ``|q| <= M``."""
    X, Y = grid.mesh()
    vals = np.broadcast_to(np.asarray(func(X, Y), dtype=float), X.shape).copy()
    bvals = np.broadcast_to(np.asarray(func(grid.bx, grid.by), dtype=float), grid.bx.shape).copy()
    if np.max(np.abs(vals)) > M:
        raise BoundViolation(f"sampled max |q| = {np.max(np.abs(vals))} exceeds M = {M}")
    return Potential(grid, vals, M, bvals)


@dataclass(frozen=True)
class BoundaryFunction:
    """Complex samples on the boundary nodes of ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        v = v.astype(complex) if np.iscomplexobj(v) else v.astype(float)
        v = v.ravel()
        if v.size != self.grid.n_boundary:
            raise ValidationError(
                f"boundary function has {v.size} samples, grid has {self.grid.n_boundary}")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_callable(cls, func: Callable, grid: Grid) -> "BoundaryFunction":
        return cls(grid, np.broadcast_to(func(grid.bx, grid.by), grid.bx.shape))

    @classmethod
    def on_edges(cls, func: Callable, grid: Grid, *edges: str) -> "BoundaryFunction":
        """``func`` on the named edges, zero elsewhere."""
        mask = grid.edge_mask(*edges)
        vals = np.where(mask, np.broadcast_to(func(grid.bx, grid.by), grid.bx.shape), 0.0)
        return cls(grid, vals)

    @classmethod
    def zeros(cls, grid: Grid) -> "BoundaryFunction":
        return cls(grid, np.zeros(grid.n_boundary))

    def _check(self, other):
        if isinstance(other, BoundaryFunction):
            if other.grid != self.grid:
                raise GridMismatch("boundary functions live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return BoundaryFunction(self.grid, self.values + self._check(other))

    def __sub__(self, other):
        return BoundaryFunction(self.grid, self.values - self._check(other))

    def __mul__(self, c):
        return BoundaryFunction(self.grid, self.values * self._check(c))

    __rmul__ = __mul__

    def __neg__(self):
        return BoundaryFunction(self.grid, -self.values)

    def conj(self) -> "BoundaryFunction":
        return BoundaryFunction(self.grid, np.conj(self.values))

    def restrict(self, mask) -> "BoundaryFunction":
        """Zero outside ``mask``."""
        return BoundaryFunction(self.grid, np.where(mask, self.values, 0.0))

    def norm(self) -> float:
        return float(np.sqrt(boundary_inner(self, self, self.grid).real))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["edge", "s", "re", "im"])
        vals = self.values.astype(complex)
        for e, s, v in zip(self.grid.edge, self.grid.arclength, vals):
            w.writerow([EDGES[e], f"{s:.17g}", f"{v.real:.17g}", f"{v.imag:.17g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, grid: Grid) -> "BoundaryFunction":
        rows = list(csv.DictReader(io.StringIO(text)))
        if len(rows) != grid.n_boundary:
            raise ValidationError(
                f"csv has {len(rows)} rows, grid has {grid.n_boundary} boundary samples")
        for r, e, s in zip(rows, grid.edge, grid.arclength):
            if r["edge"] != EDGES[e] or abs(float(r["s"]) - s) > 1e-9 * (1 + s):
                raise GridMismatch("csv boundary ordering does not match the grid")
        re_ = np.array([float(r["re"]) for r in rows])
        im_ = np.array([float(r.get("im") or 0.0) for r in rows])
        return cls(grid, re_ + 1j * im_ if np.any(im_) else re_)


def boundary_inner(g1, g2, grid: Grid) -> complex:
    """Discrete L2(boundary) inner product, conjugate-linear in ``g2``."""
    v1, v2 = _boundary_values(g1, grid), _boundary_values(g2, grid)
    return complex(np.sum(grid.weights * v1 * np.conj(v2)))


def _boundary_values(g, grid: Grid) -> np.ndarray:
    if isinstance(g, BoundaryFunction):
        if g.grid != grid:
            raise GridMismatch("boundary function belongs to a different grid")
        return g.values
    v = np.asarray(g)
    if v.shape[0] != grid.n_boundary:
        raise GridMismatch(f"expected {grid.n_boundary} boundary samples, got {v.shape[0]}")
    return v


def interior_inner(u, v, grid: Grid) -> complex:
    """Cell-area weighted discrete L2(Omega) inner product."""
    return complex(grid.cell_area * np.sum(np.asarray(u) * np.conj(np.asarray(v))))


def interior_norm(u, grid: Grid) -> float:
    return float(np.sqrt(grid.cell_area * np.sum(np.abs(np.asarray(u)) ** 2)))
