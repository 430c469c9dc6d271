"""Split-step evolution under the Hamiltonian plus Bohmian-sourced gravity.

One step of size dt, for every member of a batch:

1. guidance velocity v0 at the Bohmian point P;
2. gravity fields sampled at the predicted midpoint P + v0 dt/2;
3. half kinetic step, diagonal step exp(-i V dt + eps W dt), half kinetic
   step, renormalization;
4. Heun update of P with the start and end wave functions.

``V`` is the external potential plus the Hermitian gravitational energy
``-kappa sum_n c_n sum_j c_j u_a(r_n - q_j)``; ``W = sum_n c_n |V_G|(r_n)``
with ``|V_G|(r) = kappa sum_j c_j u_a(r - q_j)``.  Renormalizing after the
diagonal step removes the need for the mean counter-term.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft as sp_fft

from .bohm import axis_masses, batch_velocity, heun_points
from .grid import Field, Grid, spectral_derivative
from .gravity import (GravityParams, GravitySample, abs_potential_values,
                      potential_from_positions)
from .observables import density
from .states import BohmianPoint, WaveFunction

DEFAULT_CHUNK = 250


class StabilityError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


# ---------------------------------------------------------------- potentials

def _particle_view(values: np.ndarray, grid: Grid, n: int, lead: int = 0) -> np.ndarray:
    """Reshape a physical-grid array so it broadcasts along particle n's axes."""
    shp = list(values.shape[:lead]) + [1] * grid.ndim
    for a in grid.particle_axes(n):
        shp[lead + a] = grid.points_per_axis
    return values.reshape(shp)


def _particles(sel, N: int):
    return range(N) if sel is None else sel


@dataclass(frozen=True)
class GaussianTerm:
    """amplitude * exp(-|r_n - center|^2 / (2 width^2)) for each chosen particle."""
    amplitude: float
    center: tuple = (0.0,)
    width: float = 1.0
    particles: tuple[int, ...] | None = None

    def evaluate(self, grid: Grid) -> np.ndarray:
        g = grid.physical()
        c = np.broadcast_to(np.asarray(self.center, dtype=float), (g.ndim,))
        r2 = sum(g.min_image(x - ci) ** 2 for x, ci in zip(g.mesh(), c))
        phys = self.amplitude * np.exp(-r2 / (2 * self.width**2))
        return sum(_particle_view(phys, grid, n) for n in _particles(self.particles, grid.particles))


@dataclass(frozen=True)
class HarmonicWells:
    """0.5 * stiffness * min_j |r_n - c_j|^2: one or more parabolic wells.

    ``cap`` flattens each well beyond that distance, keeping max|V| small
    on large domains.
    """
    stiffness: float
    centers: tuple = ((0.0,),)
    particles: tuple[int, ...] | None = None
    cap: float | None = None

    def evaluate(self, grid: Grid) -> np.ndarray:
        g = grid.physical()
        best = None
        for center in self.centers:
            c = np.broadcast_to(np.asarray(center, dtype=float), (g.ndim,))
            r2 = sum(g.min_image(x - ci) ** 2 for x, ci in zip(g.mesh(), c))
            best = r2 if best is None else np.minimum(best, r2)
        if self.cap is not None:
            best = np.minimum(best, self.cap**2)
        phys = 0.5 * self.stiffness * best
        return sum(_particle_view(phys, grid, n) for n in _particles(self.particles, grid.particles))


@dataclass(frozen=True)
class TanhCoupling:
    """-strength * x_pointer * tanh(x_system / width) along one axis.

    With ``duration`` set the coupling acts only for 0 <= t < duration,
    giving the pointer a finite momentum kick.
    """
    strength: float
    width: float
    system: int = 0
    pointer: int = 1
    axis: int = 0
    duration: float | None = None

    def evaluate(self, grid: Grid) -> np.ndarray:
        mesh = grid.mesh()
        d = grid.dims_per_particle
        xs = mesh[self.system * d + self.axis]
        xp = grid.min_image(mesh[self.pointer * d + self.axis])
        return -self.strength * xp * np.tanh(xs / self.width)


@dataclass(frozen=True)
class PairGaussian:
    """sum over pairs n < n' of amplitude * exp(-|r_n - r_n'|^2 / (2 width^2))."""
    amplitude: float
    width: float

    def evaluate(self, grid: Grid) -> np.ndarray:
        mesh = grid.mesh()
        d = grid.dims_per_particle
        out = np.zeros(grid.shape)
        for n in range(grid.particles):
            for m in range(n + 1, grid.particles):
                r2 = sum(grid.min_image(mesh[n * d + a] - mesh[m * d + a]) ** 2
                         for a in range(d))
                out = out + self.amplitude * np.exp(-r2 / (2 * self.width**2))
        return out


@dataclass(frozen=True)
class ExternalPotentialSpec:
    """Sum of named potential terms evaluated on the configuration grid."""
    terms: tuple = ()

    def evaluate(self, grid: Grid, time: float | None = None) -> np.ndarray:
        """Potential at ``time``; ``None`` means every term, timed or not."""
        out = np.zeros(grid.shape)
        for term in self.terms:
            end = getattr(term, "duration", None)
            if time is None or end is None or time < end:
                out = out + term.evaluate(grid)
        if not np.all(np.isfinite(out)):
            raise ValueError("external potential is not finite on the grid")
        return out

    def switch_times(self) -> list[float]:
        return sorted({t.duration for t in self.terms
                       if getattr(t, "duration", None) is not None})


# ---------------------------------------------------------------- state types

@dataclass(frozen=True)
class EvolutionState:
    psi: WaveFunction
    bohm: BohmianPoint
    time: float
    mean_density: Field
    gsample: GravitySample
    node_flags: int = 0


@dataclass(frozen=True)
class Snapshot:
    step: int
    time: float
    state: EvolutionState
    observables: dict = field(default_factory=dict)


# ---------------------------------------------------------------- dynamics

@dataclass
class Dynamics:
    grid: Grid
    gravity: GravityParams = field(default_factory=lambda: GravityParams(kappa=0.0))
    potential: ExternalPotentialSpec | None = None
    masses: tuple[float, ...] | None = None

    def __post_init__(self):
        g = self.grid
        self.vext = (self.potential.evaluate(g) if self.potential is not None
                     else np.zeros(g.shape))
        self.switch_times = (self.potential.switch_times() if self.potential is not None
                             else [])
        self._vext_late = {}
        m = axis_masses(g, self.masses)
        k2 = g.wavenumbers ** 2
        self.kinetic = np.zeros(g.shape)
        for a in range(g.ndim):
            shp = [1] * g.ndim
            shp[a] = g.points_per_axis
            self.kinetic = self.kinetic + (k2 / (2 * m[a])).reshape(shp)
        self.kinetic_cutoff = float(sum((np.pi / g.spacing) ** 2 / (2 * m[a])
                                        for a in range(g.ndim)))
        self._cache: dict = {}

    # -- gravity ------------------------------------------------------------
    @property
    def gravity_active(self) -> bool:
        p = self.gravity
        return p.kappa > 0 and (p.epsilon > 0 or p.include_hermitian_gravity)

    def gravity_fields(self, points: np.ndarray):
        """Hermitian energy and gain W on the config grid for (B, N, d) sources."""
        g = self.grid
        gain, herm = self._source_fields(points)
        full = sum(_particle_view(q, g, n, lead=1) for n, q in enumerate(gain))
        if herm is not None:
            herm = -sum(_particle_view(q, g, n, lead=1) for n, q in enumerate(herm))
        return herm, full

    def gravity_sample(self, bohm: BohmianPoint) -> GravitySample:
        return potential_from_positions(bohm, self.grid, self.gravity)

    def make_state(self, psi: WaveFunction, bohm: BohmianPoint, time: float | None = None,
                   node_flags: int = 0) -> EvolutionState:
        t = psi.time if time is None else time
        psi = WaveFunction(psi.grid, psi.values, t)
        return EvolutionState(psi, bohm.wrapped(self.grid), t, density(psi),
                              self.gravity_sample(bohm), node_flags)

    # -- stability ----------------------------------------------------------
    def _source_fields(self, points: np.ndarray):
        """Per-particle physical |V_G| for (B, N, d) sources: gain and Hermitian parts."""
        g, p = self.grid, self.gravity
        N = g.particles
        c = p.weights(N)
        a = p.softening_for(g)
        pts = np.asarray(points, dtype=float).reshape(-1, N, g.dims_per_particle)
        phys = abs_potential_values(pts, g, p.kappa, a, weights=c)
        gain = [c[n] * phys for n in range(N)]
        herm = None
        if p.include_hermitian_gravity:
            if p.self_interaction:
                herm = gain
            else:
                herm = [c[n] * abs_potential_values(pts, g, p.kappa, a, exclude=n, weights=c)
                        for n in range(N)]
        return gain, herm

    @staticmethod
    def _member_max(parts) -> np.ndarray:
        # max over the configuration grid of a sum of one-particle terms
        return sum(q.reshape(len(q), -1).max(axis=1) for q in parts)

    def stability_limit(self, points=None, time: float | None = None):
        """hbar / (max|V| + eps max W + kinetic cutoff).

        With ``points`` (B, N, d) the Bohmian-sourced terms are included and
        one bound per member is returned.  The Hermitian gravity term enters
        through max|V_ext| + max|V_grav|, an upper bound on max|V|.
        """
        vext = self.vext if time is None else self.potential_at(time)
        vmax = float(np.max(np.abs(vext)))
        if points is None or not self.gravity_active:
            return 1.0 / (vmax + self.kinetic_cutoff)
        gain, herm = self._source_fields(points)
        extra = self.gravity.epsilon * self._member_max(gain)
        if herm is not None:
            extra = extra + self._member_max(herm)
        return 1.0 / (vmax + extra + self.kinetic_cutoff)

    def _kinetic_half(self, dt: float) -> np.ndarray:
        key = ("kin", dt)
        if key not in self._cache:
            self._cache[key] = np.exp(-0.5j * dt * self.kinetic)
        return self._cache[key]

    def potential_at(self, time: float) -> np.ndarray:
        """External potential in force at ``time`` (timed terms may be off)."""
        if not self.switch_times:
            return self.vext
        phase = sum(1 for t in self.switch_times if time >= t)
        if phase == 0:
            return self.vext
        if phase not in self._vext_late:
            self._vext_late[phase] = self.potential.evaluate(self.grid, time)
        return self._vext_late[phase]

    def _static_diagonal(self, dt: float, vext: np.ndarray) -> np.ndarray:
        key = ("diag", dt, id(vext))
        if key not in self._cache:
            self._cache[key] = np.exp(-1j * dt * vext)
        return self._cache[key]

    # -- stepping -----------------------------------------------------------
    def step_batch(self, values: np.ndarray, points: np.ndarray, dt: float, time: float = 0.0):
        """Advance a (B, *shape) batch and its (B, N, d) points by one step.

        Returns (values, points, node_flags).
        """
        g = self.grid
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        B = len(values)
        pts = np.asarray(points, dtype=float).reshape(B, g.ndim)
        axes = tuple(range(1, g.ndim + 1))
        spec0 = sp_fft.fftn(values, axes=axes)
        v0, flags0 = batch_velocity(values, g, pts, self.masses, spec0)
        vext = self.potential_at(time + 0.5 * dt)
        limit = 1.0 / (float(np.max(np.abs(vext))) + self.kinetic_cutoff)
        diag = self._static_diagonal(dt, vext)
        if self.gravity_active:
            mid = g.wrap(pts + 0.5 * dt * v0).reshape(B, g.particles, g.dims_per_particle)
            gain, herm = self._source_fields(mid)
            eps = self.gravity.epsilon
            extra = eps * self._member_max(gain)
            if herm is not None:
                extra = extra + self._member_max(herm)
            limit = 1.0 / (1.0 / limit + extra)
            # diagonal factor exp(eps W dt - i V_grav dt) is a product over particles;
            # the per-member peak gain is divided out (renormalized away anyway)
            for n in range(g.particles):
                expo = np.zeros(gain[n].shape, dtype=complex)
                if eps > 0:
                    expo += eps * dt * (gain[n] - gain[n].reshape(B, -1).max(axis=1)
                                        .reshape((B,) + (1,) * (gain[n].ndim - 1)))
                if herm is not None:
                    expo += 1j * dt * herm[n]
                diag = diag * _particle_view(np.exp(expo), g, n, lead=1)
        limit = float(np.min(limit))
        if dt >= limit:
            raise StabilityError(
                f"dt={dt} exceeds the stability bound {limit:.4g} at t={time:.6g}")
        kin = self._kinetic_half(dt)
        psi = sp_fft.ifftn(kin * spec0, axes=axes, overwrite_x=True)
        psi *= diag
        spec1 = sp_fft.fftn(psi, axes=axes, overwrite_x=True)
        spec1 *= kin
        # Parseval: sum |psi|^2 = sum |spec|^2 / size
        norm2 = np.sum(np.abs(spec1) ** 2, axis=axes) * g.cell_volume / g.size
        spec1 /= np.sqrt(norm2).reshape((B,) + (1,) * g.ndim)
        psi = sp_fft.ifftn(spec1, axes=axes)
        new_pts, flags = heun_points(values, psi, g, pts, dt, self.masses, v0=v0,
                                     spectrum1=spec1)
        bad = ~np.isfinite(norm2) | ~np.all(np.isfinite(new_pts), axis=1)
        if np.any(bad):
            raise NonFiniteError(
                f"non-finite values in batch members {np.flatnonzero(bad).tolist()} "
                f"at t={time:.6g} (dt={dt})")
        return psi, new_pts.reshape(B, g.particles, g.dims_per_particle), flags | flags0

    def step(self, state: EvolutionState, dt: float) -> EvolutionState:
        vals, pts, flags = self.step_batch(state.psi.values[None], state.bohm.positions[None],
                                           dt, state.time)
        t = state.time + dt
        return self.make_state(WaveFunction(self.grid, vals[0], t), BohmianPoint(pts[0]), t,
                               state.node_flags + int(flags[0]))

    def run(self, state: EvolutionState, dt: float, until: float, snapshot_stride: int = 1,
            observe: Callable[[EvolutionState], dict] | None = None) -> list[Snapshot]:
        """Evolve to ``state.time + until``, snapshotting every stride and at the end."""
        if snapshot_stride < 1:
            raise ValueError("snapshot stride must be >= 1")
        steps = int(round(until / dt))
        if abs(steps * dt - until) > 1e-9 * max(1.0, abs(until)):
            raise ValueError(f"run length {until} is not a multiple of dt={dt}")
        obs = observe or (lambda s: {})
        snaps = [Snapshot(0, state.time, state, obs(state))]
        t0 = state.time
        for i in range(1, steps + 1):
            state = self.step(state, dt)
            state = EvolutionState(state.psi, state.bohm, t0 + i * dt, state.mean_density,
                                   state.gsample, state.node_flags)
            if i % snapshot_stride == 0 or i == steps:
                snaps.append(Snapshot(i, state.time, state, obs(state)))
        return snaps

    # -- diagnostics --------------------------------------------------------
    def energy(self, psi: WaveFunction) -> float:
        """<H> with the full external potential (no gravity)."""
        g = self.grid
        spec = np.fft.fftn(psi.values)
        kin = float(np.sum(self.kinetic * np.abs(spec) ** 2)) / g.size
        pot = float(np.sum(self.vext * psi.probability))
        return (kin + pot) * g.cell_volume / psi.norm2

    def gain_field(self, bohm: BohmianPoint) -> np.ndarray:
        """W on the configuration grid for a single source configuration."""
        return self.gravity_fields(bohm.positions[None])[1][0]


def divergence_of_current(psi: WaveFunction, masses=None) -> np.ndarray:
    """sum over configuration axes of d_a Im(Phi^* d_a Phi) / m_a."""
    g = psi.grid
    m = axis_masses(g, masses)
    out = np.zeros(g.shape)
    for a in range(g.ndim):
        j = np.imag(np.conj(psi.values) * spectral_derivative(psi.values, g, a)) / m[a]
        out += spectral_derivative(j, g, a)
    return out


def continuity_residual(pair: tuple[Snapshot, Snapshot], dynamics: Dynamics):
    """Both sides of the configuration-space continuity equation.

    lhs = (rho_1 - rho_0)/dt + (div J_0 + div J_1)/2 and
    rhs = (S_0 + S_1)/2 with S = 2 eps (W - integral rho W) rho.
    """
    s0, s1 = pair
    p0, p1 = s0.state.psi, s1.state.psi
    if p0.grid != p1.grid or p0.grid != dynamics.grid:
        raise ValueError("snapshots and dynamics live on different grids")
    g = p0.grid
    dt = s1.time - s0.time
    if not dt > 0:
        raise ValueError("snapshots must be in increasing time order")
    lhs = ((p1.probability - p0.probability) / dt
           + 0.5 * (divergence_of_current(p0, dynamics.masses)
                    + divergence_of_current(p1, dynamics.masses)))
    rhs = np.zeros(g.shape)
    eps = dynamics.gravity.epsilon
    if eps > 0 and dynamics.gravity.kappa > 0:
        for s in (s0, s1):
            rho = s.state.psi.probability
            W = dynamics.gain_field(s.state.bohm)
            rhs += eps * (W - np.sum(rho * W) * g.cell_volume) * rho
    return Field(g, lhs), Field(g, rhs)


# ---------------------------------------------------------------- ensembles

def _run_chunk(args):
    dynamics, values, points, dt, steps, recorder, stride, t0, stop = args
    records = []
    flags = np.zeros(len(points), dtype=int)
    if recorder is not None:
        records.append(recorder(0, t0, values, points))
    halted = steps
    for i in range(1, steps + 1):
        values, points, f = dynamics.step_batch(values, points, dt, t0 + (i - 1) * dt)
        flags += f
        due = i % stride == 0 or i == steps
        done = stop is not None and bool(np.all(stop(i, t0 + i * dt, values, points)))
        if recorder is not None and (due or done):
            rec = recorder(i, t0 + i * dt, values, points)
            if due:
                records.append(rec)
        if done:
            halted = i
            if recorder is not None:
                # the chunk is frozen from here on
                later = sum(1 for j in range(i + 1, steps + 1) if j % stride == 0 or j == steps)
                records.extend([rec] * later)
            break
    return values, points, flags, records, halted


@dataclass
class EnsembleRun:
    values: np.ndarray | None
    points: np.ndarray
    node_flags: np.ndarray
    records: list
    times: np.ndarray
    halted_at: np.ndarray  # step at which each member's chunk stopped


def evolve_ensemble(dynamics: Dynamics, initial_values: np.ndarray, points: np.ndarray,
                    dt: float, steps: int, recorder=None, record_stride: int = 1,
                    workers: int = 1, chunk_size: int = DEFAULT_CHUNK,
                    keep_values: bool = False, t0: float = 0.0, stop=None) -> EnsembleRun:
    """Evolve members independently in fixed-size chunks.

    ``initial_values`` is either one configuration-grid array shared by all
    members or a (R, *shape) stack.  ``recorder(step, time, values, points)``
    returns a dict of arrays with a leading member axis; records are joined
    across chunks in member order, so results do not depend on ``workers``.
    ``stop(step, time, values, points)`` returns a per-member "finished"
    mask; a chunk halts once all its members are finished and its later
    records repeat the frozen state.  Chunk size therefore fixes results.
    """
    g = dynamics.grid
    points = np.asarray(points, dtype=float).reshape(-1, g.particles, g.dims_per_particle)
    R = len(points)
    shared = initial_values.shape == g.shape
    jobs = []
    for start in range(0, R, chunk_size):
        end = min(R, start + chunk_size)
        vals = (np.broadcast_to(initial_values, (end - start,) + g.shape).copy()
                if shared else np.array(initial_values[start:end]))
        jobs.append((dynamics, vals, points[start:end].copy(), dt, steps, recorder,
                     record_stride, t0, stop))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(job) for job in jobs]
    rec_steps = [0] + [i for i in range(1, steps + 1) if i % record_stride == 0 or i == steps]
    records = []
    if recorder is not None:
        for k in range(len(rec_steps)):
            parts = [res[3][k] for res in results]
            records.append({key: np.concatenate([p[key] for p in parts])
                            for key in parts[0]})
    return EnsembleRun(
        np.concatenate([r[0] for r in results]) if keep_values else None,
        np.concatenate([r[1] for r in results]),
        np.concatenate([r[2] for r in results]),
        records,
        t0 + dt * np.asarray(rec_steps, dtype=float),
        np.concatenate([np.full(len(r[1]), r[4]) for r in results]),
    )


def default_dt(dynamics: Dynamics, fraction: float = 0.5, points=None) -> float:
    """A step size at ``fraction`` of the stability bound."""
    return fraction * float(np.min(dynamics.stability_limit(points)))


__all__ = [
    "StabilityError", "NonFiniteError", "GaussianTerm", "HarmonicWells", "TanhCoupling",
    "PairGaussian", "ExternalPotentialSpec", "EvolutionState", "Snapshot", "Dynamics",
    "continuity_residual", "divergence_of_current", "evolve_ensemble", "EnsembleRun",
    "default_dt",
]
