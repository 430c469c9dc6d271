"""Wave functions, Bohmian points and analytic initial states."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid


@dataclass(frozen=True)
class WaveFunction:
    """Amplitudes over the configuration grid of all particles."""
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"amplitude shape {self.values.shape} != grid shape {self.grid.shape}")

    @property
    def norm2(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.cell_volume)

    @property
    def probability(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def normalized(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.values / np.sqrt(self.norm2), self.time)


@dataclass(frozen=True)
class BohmianPoint:
    """Configuration-space point: one d-vector per particle."""
    positions: np.ndarray = field(repr=True)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        object.__setattr__(self, "positions", pos)

    @property
    def particles(self) -> int:
        return self.positions.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return self.positions.reshape(-1)

    def wrapped(self, grid: Grid) -> "BohmianPoint":
        return BohmianPoint(grid.wrap(self.positions))


def gaussian(grid: Grid, center, sigma: float, momentum=0.0) -> np.ndarray:
    """Normalized single-particle Gaussian on the physical grid of ``grid``.

    ``sigma`` is the standard deviation of |psi|^2 along each axis.
    """
    g = grid.physical()
    center = np.broadcast_to(np.asarray(center, dtype=float), (g.ndim,))
    momentum = np.broadcast_to(np.asarray(momentum, dtype=float), (g.ndim,))
    psi = np.ones(g.shape, dtype=complex)
    for x, c, k in zip(g.mesh(), center, momentum):
        dx = g.min_image(x - c)
        psi = psi * np.exp(-dx**2 / (4 * sigma**2) + 1j * k * x)
    return psi / np.sqrt(np.sum(np.abs(psi) ** 2) * g.cell_volume)


def ring_mode(grid: Grid, n) -> np.ndarray:
    """Plane wave exp(i 2 pi n.x / L) / L^(d/2) on the physical grid."""
    g = grid.physical()
    n = np.broadcast_to(np.asarray(n), (g.ndim,))
    psi = np.ones(g.shape, dtype=complex)
    for x, ni in zip(g.mesh(), n):
        psi = psi * np.exp(2j * np.pi * ni * x / g.extent)
    return psi / g.extent ** (g.ndim / 2)


def product_state(grid: Grid, orbitals: list[np.ndarray]) -> np.ndarray:
    """Tensor product of single-particle orbitals, one per particle."""
    if len(orbitals) != grid.particles:
        raise ValueError(f"need {grid.particles} orbitals, got {len(orbitals)}")
    out = np.asarray(orbitals[0])
    for orb in orbitals[1:]:
        out = np.multiply.outer(out, orb)
    return out.astype(complex)


def symmetrize(grid: Grid, values: np.ndarray, sign: int = 1) -> np.ndarray:
    """Sum over particle permutations (bosonic for sign=+1), unnormalized."""
    d, N = grid.dims_per_particle, grid.particles
    out = np.zeros_like(values, dtype=complex)
    for perm in itertools.permutations(range(N)):
        axes = [a for n in perm for a in range(n * d, (n + 1) * d)]
        parity = 1
        if sign < 0:
            parity = _parity(perm)
        out += parity * np.transpose(values, axes)
    return out


def _parity(perm) -> int:
    perm = list(perm)
    s = 1
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            s = -s
    return s


def normalize(grid: Grid, values: np.ndarray) -> np.ndarray:
    return values / np.sqrt(np.sum(np.abs(values) ** 2) * grid.cell_volume)
