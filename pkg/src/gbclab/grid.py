"""Uniform periodic grids, spectral derivatives, quadrature and interpolation.

A :class:`Grid` describes the tensor-product configuration grid of ``N``
particles in ``d`` dimensions: ``N*d`` axes of ``M`` points each, all with the
same extent.  Axis ``n*d + a`` is component ``a`` of particle ``n``.  The
single-particle ("physical") grid is ``grid.physical()``.

Array helpers (``spectral_derivative``, ``interpolate_values``) act on the
trailing ``grid.ndim`` axes, so any leading batch axes pass straight through.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

DEFAULT_MEMORY_BUDGET = 2 * 1024**3  # bytes
_COMPLEX_BYTES = 16


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    dims_per_particle: int
    particles: int
    points_per_axis: int
    extent: float

    @property
    def spacing(self) -> float:
        return self.extent / self.points_per_axis

    @property
    def ndim(self) -> int:
        return self.dims_per_particle * self.particles

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.ndim

    @property
    def size(self) -> int:
        return self.points_per_axis**self.ndim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.ndim

    @property
    def axis(self) -> np.ndarray:
        """Coordinates of one axis, spanning [-extent/2, extent/2)."""
        return -0.5 * self.extent + self.spacing * np.arange(self.points_per_axis)

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.points_per_axis, d=self.spacing)

    def physical(self) -> "Grid":
        return Grid(self.dims_per_particle, 1, self.points_per_axis, self.extent)

    def mesh(self) -> list[np.ndarray]:
        """Open (broadcastable) coordinate arrays, one per axis."""
        x = self.axis
        out = []
        for i in range(self.ndim):
            shp = [1] * self.ndim
            shp[i] = self.points_per_axis
            out.append(x.reshape(shp))
        return out

    def particle_axes(self, n: int) -> tuple[int, ...]:
        d = self.dims_per_particle
        return tuple(range(n * d, (n + 1) * d))

    def wrap(self, x):
        """Map coordinates into [-extent/2, extent/2)."""
        half = 0.5 * self.extent
        return np.mod(np.asarray(x, dtype=float) + half, self.extent) - half

    def min_image(self, dx):
        return dx - self.extent * np.round(np.asarray(dx) / self.extent)


def make_grid(d: int, N: int, M: int, extent: float,
              memory_budget: int = DEFAULT_MEMORY_BUDGET) -> Grid:
    if d not in (1, 2, 3):
        raise GridError(f"dims per particle must be 1, 2 or 3, got {d}")
    if N < 1:
        raise GridError(f"particle count must be >= 1, got {N}")
    if M < 2 or M & (M - 1):
        raise GridError(f"points per axis must be a power of two, got {M}")
    if not extent > 0:
        raise GridError(f"extent must be positive, got {extent}")
    need = _COMPLEX_BYTES * M ** (N * d)
    if need > memory_budget:
        raise GridError(
            f"grid of {M}^{N * d} complex amplitudes needs {need:.3e} bytes, "
            f"budget is {memory_budget:.3e} bytes")
    return Grid(d, N, M, float(extent))


@dataclass(frozen=True)
class Field:
    """Values over a grid; vector fields carry a leading component axis."""
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        extra = self.values.ndim - self.grid.ndim
        if extra not in (0, 1) or self.values.shape[extra:] != self.grid.shape:
            raise GridError(
                f"values of shape {self.values.shape} do not fit grid {self.grid.shape}")

    @property
    def rank(self) -> int:
        return 1 if self.values.ndim == self.grid.ndim else self.values.shape[0]

    @property
    def is_vector(self) -> bool:
        return self.values.ndim > self.grid.ndim


def spectral_derivative(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Fourier derivative along grid axis ``axis`` of the trailing grid axes.

    The Nyquist mode is dropped so real input gives real output.
    """
    if not 0 <= axis < grid.ndim:
        raise GridError(f"axis {axis} out of range for {grid.ndim}-axis grid")
    ax = values.ndim - grid.ndim + axis
    k = 1j * grid.wavenumbers
    k[grid.points_per_axis // 2] = 0.0
    shp = [1] * values.ndim
    shp[ax] = grid.points_per_axis
    out = np.fft.ifft(np.fft.fft(values, axis=ax) * k.reshape(shp), axis=ax)
    return out.real if np.isrealobj(values) else out


def spectral_gradient(field: Field, axis: int) -> Field:
    return Field(field.grid, spectral_derivative(field.values, field.grid, axis))


def integrate(field: Field):
    """Periodic trapezoid rule: sum of values times the cell volume."""
    g = field.grid
    axes = tuple(range(field.values.ndim - g.ndim, field.values.ndim))
    return field.values.sum(axis=axes) * g.cell_volume


def _cubic_stencil(grid: Grid, points: np.ndarray):
    """Node indices and Lagrange weights, each of shape (P, ndim, 4)."""
    u = (np.asarray(points, dtype=float) + 0.5 * grid.extent) / grid.spacing
    near = np.round(u)
    u = np.where(np.abs(u - near) < 1e-9, near, u)  # exact node hits
    base = np.floor(u)
    t = u - base
    w = np.stack([
        -t * (t - 1) * (t - 2) / 6,
        (t + 1) * (t - 1) * (t - 2) / 2,
        -(t + 1) * t * (t - 2) / 2,
        (t + 1) * t * (t - 1) / 6,
    ], axis=-1)
    idx = (base.astype(np.int64)[..., None] + np.arange(-1, 3)) % grid.points_per_axis
    return idx, w


def interpolate_values(values: np.ndarray, grid: Grid, points: np.ndarray,
                       batched: bool = False) -> np.ndarray:
    """Cubic (4-point per axis) periodic interpolation.

    ``points`` has shape (P, ndim).  If ``batched``, ``values`` has shape
    (P, *grid.shape) and row ``p`` is sampled at ``points[p]``; otherwise a
    single field is sampled at every point.
    """
    points = np.atleast_2d(points)
    idx, w = _cubic_stencil(grid, points)
    n = points.shape[0]
    rows = np.arange(n)
    out = np.zeros(n, dtype=np.result_type(values.dtype, float))
    for combo in itertools.product(range(4), repeat=grid.ndim):
        weight = np.ones(n)
        index = []
        for a, c in enumerate(combo):
            weight = weight * w[:, a, c]
            index.append(idx[:, a, c])
        if batched:
            out += weight * values[(rows, *index)]
        else:
            out += weight * values[tuple(index)]
    return out


def interpolate(field: Field, point) -> complex | float | np.ndarray:
    """Value of ``field`` at an off-grid point (wrapped into the domain)."""
    g = field.grid
    pt = np.asarray(point, dtype=float).reshape(1, g.ndim)
    if field.is_vector:
        return np.array([interpolate_values(c, g, pt)[0] for c in field.values])
    return interpolate_values(field.values, g, pt)[0]
