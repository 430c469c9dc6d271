"""Bohmian configurations: sampling, guidance, trajectories, equilibrium checks.

Velocities use hbar = 1 and per-particle masses (default 1):
``v_n = Im(grad_n Phi / Phi) / m_n``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sp_fft

from .grid import Grid
from .states import BohmianPoint, WaveFunction

NODE_FLOOR = 1e-12  # relative to max |Phi|^2
DEFAULT_CELL_FACTOR = 8

__all__ = [
    "BohmianPoint", "Ensemble", "EquilibriumReport", "sample_initial_positions",
    "guidance_velocity", "advance_positions", "h_function", "locate_branch",
    "branch_indices", "batch_velocity", "axis_masses",
]


@dataclass(frozen=True)
class Ensemble:
    """Fixed set of configurations; member i draws from stream (seed, i)."""
    members: tuple[BohmianPoint, ...]
    seed: int

    def __len__(self) -> int:
        return len(self.members)

    @property
    def positions(self) -> np.ndarray:
        """(R, N, d) array of member positions."""
        return np.stack([m.positions for m in self.members])

    @property
    def stream_keys(self) -> list[tuple[int, int]]:
        return [(self.seed, i) for i in range(len(self.members))]

    @classmethod
    def from_positions(cls, positions: np.ndarray, seed: int) -> "Ensemble":
        return cls(tuple(BohmianPoint(p) for p in positions), seed)


@dataclass(frozen=True)
class EquilibriumReport:
    h_value: float
    cell_size: float
    member_count: int


def member_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def sample_initial_positions(psi: WaveFunction, count: int, seed: int) -> Ensemble:
    """Draw configurations from |Phi|^2: pick a cell, then jitter inside it.

    Each grid node owns the cell [x - dx/2, x + dx/2) along every axis.
    """
    if count <= 0:
        raise ValueError(f"member count must be positive, got {count}")
    g = psi.grid
    cdf = np.cumsum(psi.probability.reshape(-1))
    cdf /= cdf[-1]
    out = np.empty((count, g.ndim))
    for i in range(count):
        u = member_rng(seed, i).random(1 + g.ndim)
        flat = min(int(np.searchsorted(cdf, u[0], side="right")), cdf.size - 1)
        node = np.array(np.unravel_index(flat, g.shape))
        out[i] = g.axis[node] + (u[1:] - 0.5) * g.spacing
    out = g.wrap(out).reshape(count, g.particles, g.dims_per_particle)
    return Ensemble.from_positions(out, seed)


def axis_masses(grid: Grid, masses=None) -> np.ndarray:
    """Mass attached to every configuration axis."""
    if masses is None:
        return np.ones(grid.ndim)
    m = np.broadcast_to(np.asarray(masses, dtype=float), (grid.particles,))
    return np.repeat(m, grid.dims_per_particle)


def _phase_factors(grid: Grid, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fourier basis at off-grid coordinates, and its derivative.

    ``coords`` is (B,); returns two (B, M) arrays.  The Nyquist mode is
    taken as a cosine (its derivative dropped) so real data stay real.
    """
    M = grid.points_per_axis
    k = grid.wavenumbers
    u = (coords + 0.5 * grid.extent)[:, None]
    basis = np.exp(1j * k[None, :] * u)
    basis[:, M // 2] = np.cos(k[M // 2] * u[:, 0])
    dbasis = 1j * k[None, :] * basis
    dbasis[:, M // 2] = 0.0
    return basis, dbasis


def _value_and_gradient(spec: np.ndarray, pairs: list) -> tuple[np.ndarray, list]:
    """Contract trailing axes against basis factors, keeping first derivatives.

    Returns the value (B,) and a list with one (B,) derivative per axis.
    Each level contracts the last axis twice (plain and differentiated),
    so only two full-size contractions are needed.
    """
    basis, dbasis = pairs[-1]
    plain = np.einsum("b...m,bm->b...", spec, basis)
    deriv = np.einsum("b...m,bm->b...", spec, dbasis)
    if len(pairs) == 1:
        return plain, [deriv]
    value, grads = _value_and_gradient(plain, pairs[:-1])
    last = deriv
    for f, _ in reversed(pairs[:-1]):
        last = np.einsum("b...m,bm->b...", last, f)
    return value, grads + [last]


def spectral_point_values(values: np.ndarray, grid: Grid, points: np.ndarray,
                          spectrum: np.ndarray | None = None):
    """Trigonometric interpolant of each member and its gradient at its point.

    ``values`` is (B, *grid.shape), ``points`` is (B, ndim).  Returns
    (psi (B,), grad (B, ndim)).  ``spectrum`` may pass the already known
    unnormalized FFT of ``values``.
    """
    if spectrum is None:
        spectrum = sp_fft.fftn(values, axes=tuple(range(1, values.ndim)))
    pairs = [_phase_factors(grid, points[:, a]) for a in range(grid.ndim)]
    psi, grads = _value_and_gradient(spectrum, pairs)
    return psi / grid.size, np.stack(grads, axis=1) / grid.size


def batch_velocity(values: np.ndarray, grid: Grid, points: np.ndarray,
                   masses=None, spectrum: np.ndarray | None = None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Guidance velocity for a batch: member b of ``values`` at ``points[b]``.

    ``values`` is (B, *grid.shape), ``points`` is (B, ndim).  Returns the
    (B, ndim) velocity and a boolean (B,) node-floor flag.  A flagged member
    takes its velocity at the nearest grid node above the floor.
    """
    points = grid.wrap(np.asarray(points, dtype=float).reshape(len(values), grid.ndim))
    m = axis_masses(grid, masses)
    psi_p, grad_p = spectral_point_values(values, grid, points, spectrum)
    prob = np.abs(values) ** 2
    peak = prob.reshape(len(values), -1).max(axis=1)
    flags = np.abs(psi_p) ** 2 < NODE_FLOOR * peak
    vel = np.empty(points.shape)
    ok = ~flags
    vel[ok] = np.imag(grad_p[ok] / psi_p[ok, None]) / m
    for b in np.flatnonzero(flags):
        vel[b] = _velocity_near_node(values[b], prob[b], peak[b], grid, points[b], m)
    return vel, flags


def _velocity_near_node(psi, prob, peak, grid: Grid, point, m) -> np.ndarray:
    valid = np.argwhere(prob >= NODE_FLOOR * peak)
    coords = grid.axis[valid]
    dist2 = np.sum(grid.min_image(coords - point) ** 2, axis=1)
    node = grid.axis[valid[np.argmin(dist2)]]
    v, _ = batch_velocity(psi[None], grid, node[None], None)
    return v[0] / m


def guidance_velocity(psi: WaveFunction, P: BohmianPoint, masses=None,
                      return_flag: bool = False):
    """N x d de Broglie-Bohm velocity of configuration ``P``."""
    g = psi.grid
    vel, flags = batch_velocity(psi.values[None], g, P.flat[None], masses)
    vel = vel[0].reshape(g.particles, g.dims_per_particle)
    return (vel, bool(flags[0])) if return_flag else vel


def heun_points(values0: np.ndarray, values1: np.ndarray, grid: Grid,
                points: np.ndarray, dt: float, masses=None, v0=None, spectrum1=None):
    """Two-evaluation midpoint update for a batch of configurations.

    v0 from the start field at P, v1 from the end field at P + dt v0, and
    P_new = P + dt (v0 + v1) / 2, wrapped.  Returns (points, flags).
    """
    points = np.asarray(points, dtype=float).reshape(len(values0), grid.ndim)
    flags0 = np.zeros(len(values0), dtype=bool)
    if v0 is None:
        v0, flags0 = batch_velocity(values0, grid, points, masses)
    v1, flags1 = batch_velocity(values1, grid, points + dt * v0, masses, spectrum1)
    return grid.wrap(points + 0.5 * dt * (v0 + v1)), flags0 | flags1


def advance_positions(P: BohmianPoint, psi_start: WaveFunction,
                      psi_end: WaveFunction, dt: float, masses=None,
                      return_flag: bool = False):
    if psi_start.grid != psi_end.grid:
        raise ValueError("start and end wave functions live on different grids")
    g = psi_start.grid
    new, flags = heun_points(psi_start.values[None], psi_end.values[None], g,
                             P.flat[None], dt, masses)
    out = BohmianPoint(new[0].reshape(g.particles, g.dims_per_particle))
    return (out, bool(flags[0])) if return_flag else out


def coarse_factor(grid: Grid, cell_size: float | None) -> int:
    """Grid nodes per coarse cell: the largest divisor of M not above cell/dx."""
    if cell_size is None:
        cell_size = DEFAULT_CELL_FACTOR * grid.spacing
    if cell_size < grid.spacing * (1 - 1e-12):
        raise ValueError(f"cell size {cell_size} is below the grid spacing")
    want = int(np.floor(cell_size / grid.spacing + 1e-9))
    k = 1
    while k * 2 <= want and grid.points_per_axis % (k * 2) == 0:
        k *= 2
    return k


def h_function(ensemble, psi, cell_size: float | None = None) -> EquilibriumReport:
    """Coarse-grained H = sum_cells f ln(f / rho) * cell volume.

    ``ensemble`` is an Ensemble or an (R, N, d) array.  ``psi`` is a
    WaveFunction or a (B, *shape) stack whose mean |psi|^2 is the reference.
    """
    pos = ensemble.positions if isinstance(ensemble, Ensemble) else np.asarray(ensemble)
    if isinstance(psi, WaveFunction):
        g, rho = psi.grid, psi.probability
    else:
        raise TypeError("psi must be a WaveFunction")
    return h_from_density(pos, g, rho, cell_size)


def h_from_density(positions: np.ndarray, grid: Grid, rho: np.ndarray,
                   cell_size: float | None = None) -> EquilibriumReport:
    g = grid
    k = coarse_factor(g, cell_size)
    R = len(positions)
    nc = g.points_per_axis // k
    coarse_shape = (nc,) * g.ndim
    blocks = rho.reshape(sum(((nc, k) for _ in range(g.ndim)), ()))
    rho_bar = blocks.mean(axis=tuple(range(1, 2 * g.ndim, 2)))
    rho_bar = rho_bar / (rho_bar.sum() * (k * g.spacing) ** g.ndim)
    pts = g.wrap(np.asarray(positions, dtype=float).reshape(R, g.ndim))
    node = np.round((pts + 0.5 * g.extent) / g.spacing).astype(int) % g.points_per_axis
    cell = np.ravel_multi_index(tuple((node // k).T), coarse_shape)
    vol = (k * g.spacing) ** g.ndim
    f = np.bincount(cell, minlength=int(np.prod(coarse_shape))) / (R * vol)
    ref = rho_bar.reshape(-1)
    occupied = f > 0
    with np.errstate(divide="ignore"):
        terms = f[occupied] * np.log(f[occupied] / ref[occupied])
    h = float(np.sum(terms) * vol)
    return EquilibriumReport(h, k * g.spacing, R)


def locate_branch(P, branch_regions) -> int | None:
    """Index of the box containing P (flattened coordinates), or None.

    Each region is a pair (lower, upper) of length N*d sequences; use
    +-inf for unbounded sides.
    """
    flat = P.flat if isinstance(P, BohmianPoint) else np.asarray(P, dtype=float).reshape(-1)
    idx = branch_indices(flat[None], branch_regions)[0]
    return None if idx < 0 else int(idx)


def branch_indices(points: np.ndarray, branch_regions) -> np.ndarray:
    """Vectorized locate_branch over (R, N*d) points; -1 means none."""
    points = np.asarray(points, dtype=float)
    out = np.full(len(points), -1)
    for i, (lo, hi) in enumerate(branch_regions):
        inside = np.all((points >= np.asarray(lo)) & (points < np.asarray(hi)), axis=1)
        out[inside & (out < 0)] = i
    return out
