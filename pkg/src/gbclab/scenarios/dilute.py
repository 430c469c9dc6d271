"""Slow localization in dilute systems: correlation functions and rates.

Works on either a first-quantized grid state (N <= 3 Gaussians) or an
analytic mode set, under a static |V_G| that is linear, sinusoidal or
sourced by point masses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import fock, observables as obs
from ..bohm import BohmianPoint
from ..grid import Field, make_grid
from ..gravity import GravitySample, linear_sample, potential_from_positions
from ..states import WaveFunction, gaussian, normalize, product_state, symmetrize
from .config import ScenarioConfig
from .output import OutputBundle, Table

MODE_PAIR_LIMIT = 4096  # physical grid points for dense mode-set correlations


def sine_sample(grid, offset: float, slope: float, scale: float, origin: float) -> GravitySample:
    """|V_G| = offset + slope * S * sin((x - origin)/S): linear near origin,
    with curvature appearing at third order."""
    g = grid.physical()
    x = g.min_image(g.mesh()[0] - origin)
    vals = np.broadcast_to(offset + slope * scale * np.sin(x / scale), g.shape).copy()
    force = np.zeros((g.ndim,) + g.shape)
    force[0] = np.broadcast_to(slope * np.cos(x / scale), g.shape)
    return GravitySample.from_potential(Field(g, vals), force=force)


def static_sample(cfg: ScenarioConfig, grid) -> GravitySample:
    s = cfg.state
    g = grid.physical()
    if s.potential == "linear":
        slope = [s.slope] + [0.0] * (g.ndim - 1)
        return linear_sample(g, slope, origin=s.origin, offset=s.offset)
    if s.potential == "sine":
        return sine_sample(g, s.offset, s.slope, s.potential_scale, s.origin)
    centers = np.asarray(s.centers, dtype=float).reshape(-1, g.ndim)
    return potential_from_positions(BohmianPoint(centers), g, cfg.gravity.params())


def mode_set(cfg: ScenarioConfig) -> fock.ModeSet:
    s = cfg.state
    length = s.length or (cfg.grid.extent if s.family == "ring" else 1.0)
    center = (s.origin,) * cfg.grid.d if s.family == "oscillator" else None
    return fock.ModeSet(s.occupations, s.family, s.indices, length, dims=cfg.grid.d,
                        center=center)


def grid_state(cfg: ScenarioConfig) -> WaveFunction:
    gs, s = cfg.grid, cfg.state
    if gs.particles > 3:
        raise ValueError("grid states are limited to N <= 3 particles")
    g = make_grid(gs.d, gs.particles, gs.points, gs.extent)
    centers = np.asarray(s.centers, dtype=float).reshape(-1, gs.d)
    if len(centers) != gs.particles:
        raise ValueError(f"need {gs.particles} centers, got {len(centers)}")
    momenta = (np.zeros_like(centers) if not s.momenta
               else np.asarray(s.momenta, dtype=float).reshape(-1, gs.d))
    orbitals = [gaussian(g.physical(), c, s.sigma, k) for c, k in zip(centers, momenta)]
    values = product_state(g, orbitals)
    if s.symmetry != "none":
        values = symmetrize(g, values, +1 if s.symmetry == "boson" else -1)
    return WaveFunction(g, normalize(g, values))


@dataclass
class DiluteReport:
    source: str
    x: np.ndarray                # (G, d) coordinates
    rate_full: np.ndarray
    rate_gradient: np.ndarray
    current_full: np.ndarray | None
    current_gradient: np.ndarray | None
    correlation_length: float | None
    tensor: np.ndarray | None
    tensor_point: tuple
    linear_check: float | None
    timescale: dict
    sum_rules: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def bundle(self, name: str = "dilute") -> OutputBundle:
        d = self.x.shape[1]
        coords = ("x", "y", "z")[:d]
        rows = [tuple(x) + (a, b) for x, a, b in zip(self.x, self.rate_full, self.rate_gradient)]
        tables = {"rates.csv": Table(coords + ("rate_full", "rate_gradient"), rows)}
        if self.current_full is not None:
            header = coords + tuple(f"current_full_{c}" for c in coords) + tuple(
                f"current_gradient_{c}" for c in coords)
            tables["current_rates.csv"] = Table(header, [
                tuple(x) + tuple(a) + tuple(b)
                for x, a, b in zip(self.x, self.current_full.T, self.current_gradient.T)])
        results = {
            "source": self.source,
            "correlation_length": self.correlation_length,
            "max_abs_rate_full": float(np.max(np.abs(self.rate_full))),
            "max_abs_rate_difference": float(np.max(np.abs(self.rate_full - self.rate_gradient))),
            "integrated_rate_full": float(np.sum(self.rate_full)),
            "linear_check_at_origin": self.linear_check,
            "force_modification_tensor": None if self.tensor is None else self.tensor.tolist(),
            "tensor_point": list(self.tensor_point),
            "sum_rules": self.sum_rules,
            "timescale": self.timescale,
        }
        return OutputBundle(name, results, tables, list(self.warnings))


def timescale_block(cfg: ScenarioConfig) -> dict:
    r = cfg.run
    base = fock.SiParams(r.si_epsilon, r.si_force, r.si_lambda, r.si_density)
    small = fock.SiParams(r.si_epsilon, r.si_force, 1e-9, r.si_density)
    large = fock.SiParams(r.si_epsilon, r.si_force, 1e-7, r.si_density)
    return {
        "inputs_si": {"epsilon": base.epsilon, "force_N": base.force,
                      "lambda_c_m": base.lambda_c, "density_per_m3": base.density,
                      "hbar_Js": base.hbar},
        "tau_s": fock.collapse_timescale_si(base),
        "tau_lambda_1e-9_s": fock.collapse_timescale_si(small),
        "tau_lambda_1e-7_s": fock.collapse_timescale_si(large),
        "lambda_ratio": fock.collapse_timescale_si(small) / fock.collapse_timescale_si(large),
    }


def run_dilute_scenario(cfg: ScenarioConfig) -> DiluteReport:
    s, eps = cfg.state, cfg.gravity.epsilon
    warnings: list[str] = []
    if s.kind == "modes":
        ms = mode_set(cfg)
        g = make_grid(cfg.grid.d, 1, cfg.grid.points, cfg.grid.extent).physical()
        if g.size > MODE_PAIR_LIMIT:
            raise obs.PairBudgetError(f"mode-set correlations on {g.size} points exceed "
                                      f"{MODE_PAIR_LIMIT}")
        F = fock.fock_correlation(ms, g)
        K = fock.fock_current_correlation(ms, g)
        source = f"modes ({s.family})"
    elif s.kind == "gaussians":
        psi = grid_state(cfg)
        g = psi.grid.physical()
        F = obs.density_correlation(psi)
        K = obs.current_density_correlation(psi)
        source = f"grid state (N={cfg.grid.particles}, {s.symmetry})"
    else:
        raise ValueError(f"the dilute scenario needs state.kind modes or gaussians, "
                         f"not {s.kind}")
    gsample = static_sample(cfg, g)
    full = obs.density_rate_full(F, gsample, eps).values.values.reshape(-1)
    grad = obs.density_rate_gradient(F, gsample, eps).values.values.reshape(-1)
    cfull = obs.current_rate_full(K, gsample, eps).values.values.reshape(g.ndim, -1)
    cgrad = obs.current_rate_gradient(K, gsample, eps).values.values.reshape(g.ndim, -1)
    try:
        lam = fock.correlation_length(F)
    except ValueError as exc:
        lam = None
        warnings.append(f"correlation length undefined: {exc}")
    point = tuple(float(g.axis[np.argmin(np.abs(g.axis - s.origin))]) for _ in range(g.ndim))
    tensor = obs.force_modification_tensor(K, point, eps)
    linear = None
    if s.potential == "linear":
        i = obs.node_index(g, point)
        linear = float(abs(full[i] - grad[i]))
    scale = max(F.scale(), 1e-300)
    sums = {
        "F_row_integral_max": float(np.max(np.abs(F.row_integral()))) / scale,
        "K_row_integral_max": float(np.max(np.abs(K.row_integral()))) / max(K.scale(), 1e-300),
        "F_diagonal_min": float(np.min(np.real(F.diagonal()))),
        "rate_integral": float(np.sum(full) * g.cell_volume),
    }
    coords = np.stack([np.broadcast_to(x, g.shape).reshape(-1) for x in g.mesh()], axis=1)
    return DiluteReport(source, coords, full, grad, cfull, cgrad, lam, tensor, point, linear,
                        timescale_block(cfg), sums, warnings)
