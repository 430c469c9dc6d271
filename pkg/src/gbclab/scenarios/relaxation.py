"""Relaxation of a non-equilibrium ensemble toward |psi|^2.

One particle on a periodic box in a superposition of ring modes with
random phases.  A uniform start (the density of any single ring mode) is
far from |psi|^2; the coarse-grained H-function tracks the approach.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..bohm import Ensemble, h_from_density, member_rng, sample_initial_positions
from ..evolve import Dynamics, evolve_ensemble
from ..grid import make_grid
from ..states import WaveFunction, normalize, ring_mode
from .config import ScenarioConfig
from .output import OutputBundle, Table


def mode_superposition(grid, count: int, mode_max: int, seed: int) -> np.ndarray:
    """``count`` distinct ring modes with |n_a| <= mode_max and random phases."""
    d = grid.dims_per_particle
    rng = np.random.default_rng(seed)
    pool = np.array(np.meshgrid(*[np.arange(-mode_max, mode_max + 1)] * d,
                                indexing="ij")).reshape(d, -1).T
    if count > len(pool):
        raise ValueError(f"only {len(pool)} modes with |n| <= {mode_max} in {d} dims")
    chosen = pool[rng.choice(len(pool), count, replace=False)]
    phases = rng.uniform(0, 2 * np.pi, count)
    psi = sum(np.exp(1j * ph) * ring_mode(grid, n) for n, ph in zip(chosen, phases))
    return normalize(grid, psi)


def uniform_ensemble(grid, count: int, seed: int) -> Ensemble:
    L = grid.extent
    pts = np.stack([member_rng(seed, i).uniform(-L / 2, L / 2, grid.ndim)
                    for i in range(count)])
    return Ensemble.from_positions(pts.reshape(count, grid.particles,
                                               grid.dims_per_particle), seed)


@dataclass(frozen=True)
class PositionRecorder:
    """Member positions plus the chunk's summed |psi|^2 (leading axis 1)."""

    def __call__(self, step, time, values, points):
        return {"points": points.copy(), "rho_sum": np.sum(np.abs(values) ** 2, axis=0)[None]}


@dataclass
class HSeries:
    label: str
    times: np.ndarray
    h: np.ndarray
    epsilon: float
    start: str

    @property
    def ratio(self) -> float:
        return float(self.h[-1] / self.h[0])


@dataclass
class RelaxationReport:
    main: HSeries
    equilibrium: HSeries | None = None
    reference: HSeries | None = None  # same start with epsilon = 0
    cell_size: float = 0.0
    cells: int = 0
    runs: int = 0
    dt: float = 0.0

    @property
    def noise_band(self) -> float:
        """Finite-sample H of an equilibrium ensemble: bias plus five deviations."""
        k, R = self.cells, self.runs
        return (k - 1) / (2 * R) + 5 * math.sqrt((k - 1) / 2) / R

    def reference_deviation(self) -> float | None:
        if self.reference is None:
            return None
        return float(np.max(np.abs(self.main.h - self.reference.h) / self.reference.h))

    def bundle(self, name: str = "relaxation") -> OutputBundle:
        tables = {"h_function.csv": Table(("t", "H"), list(zip(self.main.times, self.main.h)))}
        results = {"H_initial": float(self.main.h[0]), "H_final": float(self.main.h[-1]),
                   "final_over_initial": self.main.ratio, "epsilon": self.main.epsilon,
                   "start": self.main.start, "cell_size": self.cell_size, "cells": self.cells,
                   "runs": self.runs, "dt": self.dt, "noise_band": self.noise_band}
        warnings = []
        if self.equilibrium is not None:
            s = self.equilibrium
            tables["h_function_equilibrium.csv"] = Table(("t", "H"), list(zip(s.times, s.h)))
            results["equilibrium_max_H"] = float(np.max(s.h))
            results["equilibrium_within_band"] = bool(np.max(s.h) <= self.noise_band)
            if np.max(s.h) > self.noise_band:
                warnings.append("equilibrium-start control left its noise band")
        if self.reference is not None:
            s = self.reference
            tables["h_function_reference.csv"] = Table(("t", "H"), list(zip(s.times, s.h)))
            results["reference_final_over_initial"] = s.ratio
            results["max_relative_deviation_from_reference"] = self.reference_deviation()
        return OutputBundle(name, results, tables, warnings)


def _h_series(cfg: ScenarioConfig, start: str, epsilon: float, workers: int,
              dt: float | None = None):
    gs, s = cfg.grid, cfg.state
    if gs.particles != 1:
        raise ValueError("the relaxation scenario uses a single particle")
    g = make_grid(gs.d, 1, gs.points, gs.extent)
    psi0 = mode_superposition(g, s.modes, s.mode_max, s.phase_seed)
    R = cfg.run.runs
    if start == "uniform":
        ens = uniform_ensemble(g, R, cfg.run.seed)
    else:
        ens = sample_initial_positions(WaveFunction(g, psi0), R, cfg.run.seed)
    gravity = replace(cfg.gravity.params(), epsilon=epsilon)
    dyn = Dynamics(g, gravity)
    dt = dt or cfg.run.dt or cfg.run.dt_fraction * float(
        np.min(dyn.stability_limit(ens.positions)))
    steps = int(math.ceil(cfg.run.duration / dt))
    run = evolve_ensemble(dyn, psi0, ens.positions, dt, steps, PositionRecorder(),
                          record_stride=cfg.run.snapshot_stride, workers=workers,
                          chunk_size=cfg.run.chunk_size)
    cell = cfg.run.h_cell or None
    hs, size = [], 0.0
    for r in run.records:
        rho = r["rho_sum"].sum(axis=0) / R
        rep = h_from_density(r["points"], g, rho, cell)
        hs.append(rep.h_value)
        size = rep.cell_size
    label = f"{start}, eps={epsilon:g}"
    return HSeries(label, run.times, np.array(hs), epsilon, start), size, g, dt


def run_relaxation_scenario(cfg: ScenarioConfig, workers: int | None = None,
                            variants: bool | None = None) -> RelaxationReport:
    """H(t) for the configured start; with variants also an equilibrium-start
    control and, when epsilon > 0, the same start at epsilon = 0."""
    workers = workers or cfg.run.workers
    eps = cfg.gravity.epsilon
    main, size, g, dt = _h_series(cfg, cfg.state.start, eps, workers)
    cells = (int(round(g.extent / size))) ** g.ndim
    report = RelaxationReport(main, cell_size=size, cells=cells, runs=cfg.run.runs, dt=dt)
    if variants if variants is not None else cfg.run.variants:
        report.equilibrium = _h_series(cfg, "equilibrium", eps, workers, dt)[0]
        if eps > 0:
            report.reference = _h_series(cfg, cfg.state.start, 0.0, workers, dt)[0]
    return report
