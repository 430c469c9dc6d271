"""Physical-space observables of an N-particle wave function.

Correlation functions are stored as dense pair matrices over the flattened
physical grid (``G = M**d`` points).  The same-particle contact term of
``<D(r) D(r')>`` (and of the symmetrized ``<J D>``) is a delta on the
diagonal; it is kept apart in ``contact_weight`` with the grid delta
``1/cell_volume`` folded in, so that integrals over r' of
``values + diag(contact_weight)`` are exact sums.

Units: hbar = 1; particle masses default to 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid, spectral_derivative
from .gravity import GravitySample
from .states import WaveFunction

PAIR_BUDGET = 512  # max physical grid points for dense pair storage


class PairBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class CorrelationData:
    """Two-point function F(r, r') or K_i(r, r') on a physical grid.

    ``values``: (G, G) for kind "F", (d, G, G) for kind "K".
    ``contact_weight``: (G,) or (d, G); multiplies a Kronecker delta.
    ``density`` (and ``current`` for K) are the one-point averages.
    """
    kind: str
    grid: Grid
    values: np.ndarray
    contact_weight: np.ndarray
    density: np.ndarray
    current: np.ndarray | None = None

    @property
    def dv(self) -> float:
        return self.grid.cell_volume

    def with_contact(self) -> np.ndarray:
        """Pair matrix with the contact delta placed on the diagonal."""
        out = np.array(self.values, dtype=np.result_type(self.values, float))
        G = self.values.shape[-1]
        diag = np.arange(G)
        out[..., diag, diag] += self.contact_weight
        return out

    def row_integral(self) -> np.ndarray:
        """integral dr' C(r, r') for every r."""
        return self.with_contact().sum(axis=-1) * self.dv

    def column_integral(self) -> np.ndarray:
        """integral dr C(r, r') for every r'."""
        return self.with_contact().sum(axis=-2) * self.dv

    def diagonal(self) -> np.ndarray:
        G = self.values.shape[-1]
        return self.with_contact()[..., np.arange(G), np.arange(G)]

    def scale(self) -> float:
        return float(np.max(np.abs(self.with_contact())))


@dataclass(frozen=True)
class RateField:
    values: Field
    method: str


def _masses(masses, N: int) -> np.ndarray:
    if masses is None:
        return np.ones(N)
    m = np.broadcast_to(np.asarray(masses, dtype=float), (N,))
    return m


def _keep(values: np.ndarray, grid: Grid, particles: tuple[int, ...]) -> np.ndarray:
    """Integrate out every particle not listed, in the listed order."""
    keep_axes = [a for n in particles for a in grid.particle_axes(n)]
    lead = values.ndim - grid.ndim
    others = tuple(lead + a for a in range(grid.ndim) if a not in keep_axes)
    out = values.sum(axis=others) if others else values
    # remaining grid axes are in increasing order; permute to requested order
    remaining = sorted(keep_axes)
    perm = [remaining.index(a) for a in keep_axes]
    out = np.transpose(out, list(range(lead)) + [lead + p for p in perm])
    n_out = grid.particles - len(particles)
    return out * grid.spacing ** (grid.dims_per_particle * n_out)


def density(psi: WaveFunction) -> Field:
    """<D(r)> = sum over particles of the one-body marginal of |Phi|^2."""
    g = psi.grid
    prob = psi.probability
    out = sum(_keep(prob, g, (n,)) for n in range(g.particles))
    return Field(g.physical(), np.asarray(out, dtype=float))


def _current_components(psi: WaveFunction, masses=None) -> list[np.ndarray]:
    """Im(Phi^* d_a Phi)/m for every configuration axis a."""
    g = psi.grid
    m = _masses(masses, g.particles)
    conj = np.conj(psi.values)
    out = []
    for axis in range(g.ndim):
        n = axis // g.dims_per_particle
        out.append(np.imag(conj * spectral_derivative(psi.values, g, axis)) / m[n])
    return out


def current(psi: WaveFunction, masses=None) -> Field:
    """<J(r)> marginalized per particle, a d-vector field."""
    g = psi.grid
    d = g.dims_per_particle
    comps = _current_components(psi, masses)
    out = np.zeros((d,) + g.physical().shape)
    for n in range(g.particles):
        for a in range(d):
            out[a] += _keep(comps[n * d + a], g, (n,))
    return Field(g.physical(), out)


def _check_pair_budget(grid: Grid):
    G = grid.points_per_axis ** grid.dims_per_particle
    if G > PAIR_BUDGET:
        raise PairBudgetError(
            f"dense pair storage needs {G}^2 values; limit is {PAIR_BUDGET}^2")
    return G


def density_correlation(psi: WaveFunction) -> CorrelationData:
    g = psi.grid
    G = _check_pair_budget(g)
    prob = psi.probability
    dens = density(psi).values.reshape(G)
    pair = np.zeros((G, G))
    for n in range(g.particles):
        for n2 in range(g.particles):
            if n != n2:
                pair += _keep(prob, g, (n, n2)).reshape(G, G)
    values = pair - np.outer(dens, dens)
    contact = dens / g.physical().cell_volume
    return CorrelationData("F", g.physical(), values, contact, dens)


def current_density_correlation(psi: WaveFunction, masses=None) -> CorrelationData:
    g = psi.grid
    G = _check_pair_budget(g)
    d = g.dims_per_particle
    prob = psi.probability
    comps = _current_components(psi, masses)
    dens = density(psi).values.reshape(G)
    cur = current(psi, masses).values.reshape(d, G)
    values = np.zeros((d, G, G))
    for n in range(g.particles):
        for n2 in range(g.particles):
            if n == n2:
                continue
            for a in range(d):
                values[a] += _keep(comps[n * d + a], g, (n, n2)).reshape(G, G)
    values -= cur[:, :, None] * dens[None, None, :]
    contact = cur / g.physical().cell_volume
    del prob
    return CorrelationData("K", g.physical(), values, contact, dens, cur)


def _check_same_grid(C: CorrelationData, gsample: GravitySample):
    if C.grid != gsample.abs_potential.grid:
        raise ValueError("correlation data and gravity sample live on different grids")


def _displacements(grid: Grid) -> np.ndarray:
    """(G, G, d) minimum-image vectors r' - r."""
    coords = np.stack([np.broadcast_to(x, grid.shape).reshape(-1) for x in grid.mesh()],
                      axis=-1)
    return grid.min_image(coords[None, :, :] - coords[:, None, :])


def density_rate_full(F: CorrelationData, gsample: GravitySample,
                      epsilon: float) -> RateField:
    """2 eps integral dr' |V_G(r')| F(r, r'), contact term included."""
    _check_same_grid(F, gsample)
    V = gsample.abs_potential.values.reshape(-1)
    rate = 2 * epsilon * np.real(F.values @ V + F.contact_weight * V) * F.dv
    return RateField(Field(F.grid, rate.reshape(F.grid.shape)), "full-integral")


def first_moment(C: CorrelationData) -> np.ndarray:
    """integral dr' (r' - r)_j C(r, r') as (..., G, d); contact drops out."""
    disp = _displacements(C.grid)
    return np.real(np.einsum("...rs,rsj->...rj", C.values, disp)) * C.dv


def density_rate_gradient(F: CorrelationData, gsample: GravitySample,
                          epsilon: float) -> RateField:
    """2 eps F_G(r) . integral dr' (r' - r) F(r, r')."""
    _check_same_grid(F, gsample)
    force = gsample.force.values.reshape(F.grid.ndim, -1).T  # (G, d)
    rate = 2 * epsilon * np.sum(first_moment(F) * force, axis=-1)
    return RateField(Field(F.grid, rate.reshape(F.grid.shape)), "gradient-expansion")


def current_rate_full(K: CorrelationData, gsample: GravitySample,
                      epsilon: float) -> RateField:
    """eps integral dr' |V_G(r')| K(r, r'), contact term included."""
    _check_same_grid(K, gsample)
    V = gsample.abs_potential.values.reshape(-1)
    rate = epsilon * np.real(K.values @ V + K.contact_weight * V) * K.dv
    d = K.grid.ndim
    return RateField(Field(K.grid, rate.reshape((d,) + K.grid.shape)), "full-integral")


def current_rate_gradient(K: CorrelationData, gsample: GravitySample,
                          epsilon: float) -> RateField:
    """T(r) . F_G(r) at every grid point."""
    _check_same_grid(K, gsample)
    d = K.grid.ndim
    force = gsample.force.values.reshape(d, -1).T  # (G, d)
    T = epsilon * first_moment(K)  # (d_i, G, d_j)
    rate = np.einsum("irj,rj->ir", T, force)
    return RateField(Field(K.grid, rate.reshape((d,) + K.grid.shape)), "gradient-expansion")


def node_index(grid: Grid, point) -> int:
    """Flat index of the grid node at ``point``; the point must be a node."""
    point = np.broadcast_to(np.asarray(point, dtype=float), (grid.ndim,))
    u = (grid.wrap(point) + 0.5 * grid.extent) / grid.spacing
    idx = np.round(u)
    if np.any(np.abs(u - idx) > 1e-9):
        raise ValueError(f"{point} is not a grid node")
    idx = idx.astype(int) % grid.points_per_axis
    return int(np.ravel_multi_index(tuple(idx), grid.shape))


def force_modification_tensor(K: CorrelationData, r_eval, epsilon: float) -> np.ndarray:
    """T_ij(r) = eps integral dr' (r' - r)_j K_i(r, r'), a d x d array."""
    i = node_index(K.grid, r_eval)
    disp = _displacements(K.grid)[i]  # (G, d)
    return epsilon * np.real(K.values[:, i, :] @ disp) * K.dv
