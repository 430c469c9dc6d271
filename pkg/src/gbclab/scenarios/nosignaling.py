"""Two separated parties share an entangled pair; Alice picks a local potential.

Bob's ensemble-averaged marginal at the final time must not depend on
Alice's choice.  Both settings use the same seeds, hence the same initial
Bohmian configurations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..bohm import sample_initial_positions
from ..evolve import Dynamics, ExternalPotentialSpec, GaussianTerm, evolve_ensemble
from ..grid import make_grid
from ..states import WaveFunction, gaussian, normalize, product_state
from .config import ScenarioConfig
from .output import OutputBundle, Table


def entangled_pair(grid, half: float, sigma: float) -> np.ndarray:
    """(|left, left> + |right, right>) / sqrt(2) for two particles."""
    gp = grid.physical()
    left, right = gaussian(gp, -half, sigma), gaussian(gp, half, sigma)
    return normalize(grid, product_state(grid, [left, left]) + product_state(grid, [right, right]))


def alice_settings(cfg: ScenarioConfig) -> list[ExternalPotentialSpec | None]:
    s = cfg.state
    bump = GaussianTerm(s.alice_amplitude, (s.alice_center,) * cfg.grid.d, s.alice_width,
                        particles=(0,))
    return [None, ExternalPotentialSpec((bump,))]


@dataclass(frozen=True)
class MarginalRecorder:
    """Marginal density of the last particle for every member (d = 1)."""
    spacing: float

    def __call__(self, step, time, values, points):
        axes = tuple(range(1, values.ndim - 1))
        return {"marginal": np.sum(np.abs(values) ** 2, axis=axes) * self.spacing ** len(axes)}


def binned(marginal: np.ndarray, spacing: float, bins: int) -> np.ndarray:
    """Probabilities of ``bins`` equal groups of grid nodes."""
    M = len(marginal)
    if M % bins:
        raise ValueError(f"bin count {bins} does not divide {M} grid points")
    return marginal.reshape(bins, M // bins).sum(axis=1) * spacing


@dataclass
class NoSignalingReport:
    x: np.ndarray
    marginals: list[np.ndarray]  # per setting, on the grid
    l1: float
    tolerance: float
    bins: int
    runs: int
    dt: float
    steps: int

    @property
    def passed(self) -> bool:
        return self.l1 < self.tolerance

    def bundle(self, name: str = "nosignaling") -> OutputBundle:
        rows = [(x, a, b) for x, a, b in zip(self.x, *self.marginals)]
        results = {"l1_distance": self.l1, "tolerance": self.tolerance, "bins": self.bins,
                    "runs": self.runs, "below_tolerance": self.passed, "dt": self.dt,
                    "steps": self.steps}
        warnings = [] if self.passed else [
            f"marginal L1 distance {self.l1:.4g} exceeds tolerance {self.tolerance:.4g}"]
        return OutputBundle(name, results,
                            {"marginals.csv": Table(("x", "setting_a", "setting_b"), rows)},
                            warnings)


def run_nosignaling_scenario(cfg: ScenarioConfig, workers: int | None = None,
                             settings=None) -> NoSignalingReport:
    """Bob's averaged final marginal under each Alice setting and their L1 distance.

    ``settings`` overrides the two Alice potentials (used for controls).
    """
    gs = cfg.grid
    if gs.particles != 2 or gs.d != 1:
        raise ValueError("the no-signaling scenario uses two particles in one dimension")
    g = make_grid(gs.d, 2, gs.points, gs.extent)
    psi0 = entangled_pair(g, 0.5 * cfg.state.separation, cfg.state.sigma)
    R = cfg.run.runs
    ens = sample_initial_positions(WaveFunction(g, psi0), R, cfg.run.seed)
    gravity = cfg.gravity.params()
    settings = alice_settings(cfg) if settings is None else settings
    dyns = [Dynamics(g, gravity, pot) for pot in settings]
    # one step size for both settings
    dt = cfg.run.dt or cfg.run.dt_fraction * min(
        float(np.min(d.stability_limit(ens.positions))) for d in dyns)
    steps = int(math.ceil(cfg.run.duration / dt))
    rec = MarginalRecorder(g.spacing)
    marginals = []
    for dyn in dyns:
        run = evolve_ensemble(dyn, psi0, ens.positions, dt, steps, rec, record_stride=steps,
                              workers=workers or cfg.run.workers,
                              chunk_size=cfg.run.chunk_size)
        marginals.append(run.records[-1]["marginal"].mean(axis=0))
    bins = cfg.run.bins or g.points_per_axis
    p, q = (binned(m, g.spacing, bins) for m in marginals)
    l1 = float(np.sum(np.abs(p - q)))
    tol = 4 * math.sqrt(bins / R)
    return NoSignalingReport(g.axis, marginals, l1, tol, bins, R, dt, steps)
