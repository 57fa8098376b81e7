"""Uniform cell-centered meshes for intervals, rectangles and radial discs.

All three shapes share one finite-volume contract: cell weights (volumes),
face areas, and zero-flux boundary faces. The radial disc is meshed in the
radius only, with annulus areas as weights; the inner face at ``r = 0`` has
zero area so no special treatment of the axis is needed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

SHAPES = ("interval", "rectangle", "radial_disc")
MIN_CELLS = 4


class NonFiniteFieldError(ValueError):
    """Raised when a field would hold NaN or infinite values."""


@dataclass(frozen=True)
class Domain:
    """Geometric domain; ``lengths`` is ``(L,)``, ``(Lx, Ly)`` or ``(R,)``."""

    shape: str
    lengths: tuple[float, ...]

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown domain shape {self.shape!r}")
        expected = 2 if self.shape == "rectangle" else 1
        lengths = tuple(float(x) for x in self.lengths)
        if len(lengths) != expected:
            raise ValueError(f"{self.shape} needs {expected} length(s), got {lengths}")
        if not all(math.isfinite(x) and x > 0 for x in lengths):
            raise ValueError(f"domain lengths must be positive, got {lengths}")
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def interval(cls, length: float = 1.0) -> Domain:
        return cls("interval", (length,))

    @classmethod
    def rectangle(cls, lx: float = 1.0, ly: float = 1.0) -> Domain:
        return cls("rectangle", (lx, ly))

    @classmethod
    def disc(cls, radius: float = 1.0) -> Domain:
        return cls("radial_disc", (radius,))

    @property
    def measure(self) -> float:
        """Lebesgue measure |Ω| of the domain."""
        if self.shape == "interval":
            return self.lengths[0]
        if self.shape == "rectangle":
            return self.lengths[0] * self.lengths[1]
        return math.pi * self.lengths[0] ** 2

    @property
    def spatial_dim(self) -> int:
        """Dimension of the physical domain (the disc is 2D)."""
        return 1 if self.shape == "interval" else 2


class Grid:
    """Cell-centered uniform mesh over a :class:`Domain`.

    Attributes:
        domain: the meshed domain
        n_cells: cells per mesh axis
        h: cell width per mesh axis
        centers: cell-center coordinates per mesh axis (1D arrays)
        weights: integration weight of every cell, shaped like a field
        face_areas: per mesh axis, the area of every face (boundary faces
            included), shaped like the face arrays of :meth:`face_gradient`
    """

    def __init__(self, domain: Domain, n_cells: int | Sequence[int]):
        n = (n_cells,) if np.isscalar(n_cells) else tuple(n_cells)
        n = tuple(int(k) for k in n)
        axes = 2 if domain.shape == "rectangle" else 1
        if len(n) == 1 and axes == 2:
            n = n * 2
        if len(n) != axes:
            raise ValueError(f"{domain.shape} needs {axes} cell counts, got {n}")
        if any(k < MIN_CELLS for k in n):
            raise ValueError(f"need at least {MIN_CELLS} cells per axis, got {n}")

        self.domain = domain
        self.n_cells = n
        self.h = tuple(length / k for length, k in zip(domain.lengths, n))
        self.centers = tuple((np.arange(k) + 0.5) * dx for k, dx in zip(n, self.h))

        if domain.shape == "interval":
            self.weights = np.full(n, self.h[0])
            self.face_areas = (np.ones(n[0] + 1),)
        elif domain.shape == "rectangle":
            hx, hy = self.h
            self.weights = np.full(n, hx * hy)
            self.face_areas = (np.full((n[0] + 1, n[1]), hy), np.full((n[0], n[1] + 1), hx))
        else:
            edges = np.arange(n[0] + 1) * self.h[0]
            self.weights = math.pi * (edges[1:] ** 2 - edges[:-1] ** 2)
            self.face_areas = (2 * math.pi * edges,)
        self.weights.setflags(write=False)
        for a in self.face_areas:
            a.setflags(write=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n_cells

    @property
    def size(self) -> int:
        return int(np.prod(self.n_cells))

    @property
    def ndim(self) -> int:
        """Number of mesh axes (1 for interval and radial disc)."""
        return len(self.n_cells)

    @property
    def is_radial(self) -> bool:
        return self.domain.shape == "radial_disc"

    @property
    def volume(self) -> float:
        return self.domain.measure

    def cell_coords(self) -> tuple[np.ndarray, ...]:
        """Coordinates of every cell, one array per mesh axis shaped like a field."""
        if self.ndim == 1:
            return (self.centers[0],)
        return tuple(np.meshgrid(*self.centers, indexing="ij"))

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and self.domain == other.domain
            and self.n_cells == other.n_cells
        )

    def __hash__(self):
        return hash((self.domain, self.n_cells))

    def __repr__(self):
        return f"Grid({self.domain.shape}, lengths={self.domain.lengths}, n_cells={self.n_cells})"


def build_grid(domain: Domain, n_cells: int | Sequence[int]) -> Grid:
    return Grid(domain, n_cells)


class Field:
    """Immutable cell-wise scalar data on a grid.

    Arithmetic with scalars, arrays or fields on the same grid returns new
    fields. Values must be finite.
    """

    __slots__ = ("grid", "data")
    __array_priority__ = 100

    def __init__(self, grid: Grid, data):
        values = np.array(np.broadcast_to(np.asarray(data, dtype=float), grid.shape))
        if not np.all(np.isfinite(values)):
            raise NonFiniteFieldError("field values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.data = values

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[..., np.ndarray]) -> Field:
        """Sample ``func`` at cell centers (``func(x)``, ``func(x, y)`` or ``func(r)``)."""
        return cls(grid, func(*grid.cell_coords()))

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.data
        return other

    def __add__(self, other):
        return Field(self.grid, self.data + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.data - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.data)

    def __mul__(self, other):
        return Field(self.grid, self.data * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.data / self._other(other))

    def __neg__(self):
        return Field(self.grid, -self.data)

    def __pow__(self, exponent):
        return Field(self.grid, self.data ** self._other(exponent))

    def integral(self) -> float:
        return integrate(self)

    def min(self) -> float:
        return float(self.data.min())

    def max(self) -> float:
        return float(self.data.max())

    def __repr__(self):
        return f"Field({self.grid!r}, min={self.min():.6g}, max={self.max():.6g})"


def integrate(f: Field) -> float:
    """Weighted cell sum, the discrete counterpart of the integral over Ω."""
    if not np.all(np.isfinite(f.data)):
        raise NonFiniteFieldError("cannot integrate non-finite values")
    return float(np.sum(f.grid.weights * f.data))


def face_gradient(f: Field) -> tuple[np.ndarray, ...]:
    """Normal derivative on every face, per mesh axis.

    Interior faces get the two-point difference quotient; boundary faces are
    zero (homogeneous Neumann).
    """
    return face_gradient_array(f.grid, f.data)


def face_gradient_array(grid: Grid, values: np.ndarray) -> tuple[np.ndarray, ...]:
    out = []
    for axis, dx in enumerate(grid.h):
        shape = list(values.shape)
        shape[axis] += 1
        g = np.zeros(shape)
        inner = [slice(None)] * values.ndim
        inner[axis] = slice(1, -1)
        g[tuple(inner)] = np.diff(values, axis=axis) / dx
        out.append(g)
    return tuple(out)


def face_mean_array(grid: Grid, values: np.ndarray) -> tuple[np.ndarray, ...]:
    """Arithmetic mean of the two adjacent cells on every face.

    Boundary faces take the value of their single adjacent cell.
    """
    out = []
    for axis in range(grid.ndim):
        lo, hi = _face_neighbors(values, axis)
        out.append(0.5 * (lo + hi))
    return tuple(out)


def _face_neighbors(values: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell values on the low and high side of every face (boundary faces repeat the edge cell)."""
    first = [slice(None)] * values.ndim
    last = [slice(None)] * values.ndim
    first[axis] = slice(0, 1)
    last[axis] = slice(-1, None)
    lo = np.concatenate((values[tuple(first)], values), axis=axis)
    hi = np.concatenate((values, values[tuple(last)]), axis=axis)
    return lo, hi


def divergence_array(grid: Grid, fluxes: Sequence[np.ndarray]) -> np.ndarray:
    """Cell-averaged divergence of face fluxes (flux times face area, over volume)."""
    total = np.zeros(grid.shape)
    for axis, (flux, area) in enumerate(zip(fluxes, grid.face_areas)):
        total += np.diff(flux * area, axis=axis)
    return total / grid.weights


def divgrad_array(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Flux-form Neumann Laplacian of cell values."""
    return divergence_array(grid, face_gradient_array(grid, values))


def write_snapshot(f: Field, path: str | Path) -> None:
    """Write a field as CSV: ``# shape,n_cells,h`` header, then ``index,coord(s),value``."""
    grid = f.grid
    n = "x".join(str(k) for k in grid.n_cells)
    h = "x".join(repr(float(x)) for x in grid.h)
    coords = [c.ravel() for c in grid.cell_coords()]
    with open(path, "w", newline="") as fh:
        fh.write(f"# {grid.domain.shape},{n},{h}\n")
        writer = csv.writer(fh, lineterminator="\n")
        for i, value in enumerate(f.data.ravel()):
            writer.writerow([i, *(repr(float(c[i])) for c in coords), repr(float(value))])


def read_snapshot(path: str | Path) -> Field:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing '# shape,n_cells,h' header")
        shape, n, h = header[1:].strip().split(",")
        rows = [line.split(",") for line in fh if line.strip()]
    n_cells = tuple(int(k) for k in n.split("x"))
    widths = tuple(float(x) for x in h.split("x"))
    domain = Domain(shape, tuple(k * dx for k, dx in zip(n_cells, widths)))
    grid = Grid(domain, n_cells)
    if len(rows) != grid.size:
        raise ValueError(f"{path}: expected {grid.size} rows, found {len(rows)}")
    values = np.array([float(r[-1]) for r in rows]).reshape(grid.shape)
    return Field(grid, values)
