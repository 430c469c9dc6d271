"""Gravitational potential sourced by Bohmian positions.

All kernels use the softened Coulomb form ``1/sqrt(s^2 + a^2)`` with the
periodic minimum-image distance, in every dimension.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid, integrate, interpolate, spectral_derivative
from .states import BohmianPoint


@dataclass(frozen=True)
class GravityParams:
    """Coupling ``kappa = G m^2``, imaginary fraction ``epsilon``, softening.

    ``softening=None`` means two grid spacings of whatever grid it is used on.
    ``coordinate_weights`` scales the coupling felt by each particle
    coordinate (a heavy collective pointer uses weight A).
    """
    kappa: float = 1.0
    epsilon: float = 0.0
    softening: float | None = None
    include_hermitian_gravity: bool = True
    self_interaction: bool = True
    coordinate_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if not 0 <= self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.softening is not None and not self.softening > 0:
            raise ValueError(f"softening must be > 0, got {self.softening}")

    def softening_for(self, grid: Grid) -> float:
        return 2.0 * grid.spacing if self.softening is None else self.softening

    def weights(self, N: int) -> np.ndarray:
        if self.coordinate_weights is None:
            return np.ones(N)
        w = np.asarray(self.coordinate_weights, dtype=float)
        if w.shape != (N,):
            raise ValueError(f"need {N} coordinate weights, got {w.shape}")
        return w


@dataclass(frozen=True)
class GravitySample:
    """|V_G| on the physical grid and its gradient (the local force)."""
    abs_potential: Field
    force: Field
    source_point: BohmianPoint | None = None

    @classmethod
    def from_potential(cls, abs_potential: Field, force: np.ndarray | None = None,
                       source_point: BohmianPoint | None = None) -> "GravitySample":
        """Wrap a potential; the force defaults to its spectral gradient.

        Pass ``force`` explicitly for potentials that are not periodic
        (a uniform slope, say), where the spectral gradient is meaningless.
        """
        g = abs_potential.grid
        if force is None:
            force = np.stack([spectral_derivative(abs_potential.values, g, a)
                              for a in range(g.ndim)])
        force = np.broadcast_to(np.asarray(force, dtype=float), (g.ndim,) + g.shape)
        return cls(abs_potential, Field(g, np.array(force)), source_point)


def softened_kernel(dist2, a: float):
    return 1.0 / np.sqrt(dist2 + a * a)


def abs_potential_values(positions: np.ndarray, grid: Grid, kappa: float,
                         softening: float, exclude: int | None = None,
                         weights=None) -> np.ndarray:
    """kappa * sum_j c_j u_a(r - q_j) on the physical grid.

    ``positions`` is (..., N, d); leading axes are kept.  ``exclude`` drops
    one source index; ``weights`` are the c_j (default 1).
    """
    g = grid.physical()
    positions = np.asarray(positions, dtype=float)
    lead = positions.shape[:-2]
    out = np.zeros(lead + g.shape)
    mesh = g.mesh()
    expand = (slice(None),) * len(lead) + (None,) * g.ndim
    for j in range(positions.shape[-2]):
        if j == exclude:
            continue
        dist2 = 0.0
        for a in range(g.ndim):
            q = positions[..., j, a][expand]
            dist2 = dist2 + g.min_image(mesh[a] - q) ** 2
        c = 1.0 if weights is None else float(weights[j])
        out += c * softened_kernel(dist2, softening)
    return kappa * out


def potential_from_positions(P: BohmianPoint, grid: Grid,
                             params: GravityParams) -> GravitySample:
    g = grid.physical()
    a = params.softening_for(g)
    vals = abs_potential_values(P.positions, g, params.kappa, a,
                                weights=params.weights(P.particles))
    return GravitySample.from_potential(Field(g, vals), source_point=P)


def pairwise_potential_energy(config_point, sources, params: GravityParams,
                              grid: Grid | None = None) -> float:
    """Hermitian gravitational energy -kappa sum_n sum_j c_n c_j u_a(r_n - q_j).

    ``config_point`` and ``sources`` are (N, d) arrays (or BohmianPoints).
    Without a grid the plain Euclidean distance is used and the softening
    must be set explicitly.
    """
    if not params.include_hermitian_gravity:
        return 0.0
    r = _as_positions(config_point)
    q = _as_positions(sources)
    if grid is None and params.softening is None:
        raise ValueError("softening must be given when no grid is supplied")
    a = params.softening_for(grid.physical()) if grid is not None else params.softening
    c = params.weights(r.shape[0])
    total = 0.0
    for n in range(r.shape[0]):
        for j in range(q.shape[0]):
            if j == n and not params.self_interaction:
                continue
            s = r[n] - q[j]
            if grid is not None:
                s = grid.min_image(s)
            total += c[n] * c[j] * float(softened_kernel(np.dot(s, s), a))
    return -params.kappa * total


def localization_rate(config_point, mean_density: Field, gsample: GravitySample,
                      params: GravityParams) -> float:
    """epsilon * (sum_n c_n |V_G(r_n)| - integral <D> |V_G|).

    Only equal coordinate weights are accepted; the average term would
    otherwise need the per-particle marginals.
    """
    r = _as_positions(config_point, mean_density.grid.dims_per_particle)
    N = r.shape[0]
    total = float(integrate(mean_density).real)
    if abs(total - N) > 1e-6:
        raise ValueError(f"mean density integrates to {total}, expected {N}")
    if params.epsilon == 0:
        return 0.0
    c = params.weights(N)
    local = sum(c[n] * float(interpolate(gsample.abs_potential, r[n])) for n in range(N))
    average = float(integrate(Field(mean_density.grid,
                                    mean_density.values.real * gsample.abs_potential.values)))
    if params.coordinate_weights is not None:
        if c.max() != c.min():
            raise ValueError("unequal coordinate weights need the weighted localization "
                             "rate of the evolution module")
        average *= c[0]
    return params.epsilon * (local - average)


def linear_sample(grid: Grid, slope, origin=0.0, offset: float = 0.0) -> GravitySample:
    """|V_G| = offset + slope . (x - origin), minimum image about ``origin``.

    The jump sits half a period away from ``origin``; the force is the
    analytic slope.
    """
    g = grid.physical()
    slope = np.broadcast_to(np.asarray(slope, dtype=float), (g.ndim,))
    origin = np.broadcast_to(np.asarray(origin, dtype=float), (g.ndim,))
    vals = np.full(g.shape, float(offset))
    for x, s, o in zip(g.mesh(), slope, origin):
        vals = vals + s * g.min_image(x - o)
    force = np.stack([np.full(g.shape, s) for s in slope])
    return GravitySample.from_potential(Field(g, vals), force=force)


def _as_positions(p, d: int | None = None) -> np.ndarray:
    if isinstance(p, BohmianPoint):
        return p.positions
    arr = np.asarray(p, dtype=float)
    if d is not None:
        return arr.reshape(-1, d)
    return arr[:, None] if arr.ndim == 1 else arr
