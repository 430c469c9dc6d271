import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gbclab.bohm import (Ensemble, advance_positions, branch_indices, guidance_velocity,
                         h_from_density, h_function, locate_branch, sample_initial_positions)
from gbclab.evolve import Dynamics, ExternalPotentialSpec, HarmonicWells, evolve_ensemble
from gbclab.grid import make_grid
from gbclab.states import BohmianPoint, WaveFunction, gaussian, normalize


def _wave(g, values):
    return WaveFunction(g, normalize(g, values))


def test_sampling_delta_state():
    g = make_grid(1, 1, 32, 8.0)
    vals = np.zeros(32, dtype=complex)
    vals[11] = 1.0
    ens = sample_initial_positions(_wave(g, vals), 200, seed=4)
    x = ens.positions.ravel()
    assert np.all(np.abs(x - g.axis[11]) <= 0.5 * g.spacing)


def test_sampling_gaussian_moments():
    g = make_grid(1, 1, 256, 16.0)
    # |psi|^2 is a Gaussian with mean 0.5 and standard deviation 1
    psi = _wave(g, gaussian(g, 0.5, 1.0))
    n = 100_000
    x = sample_initial_positions(psi, n, seed=7).positions.ravel()
    assert abs(x.mean() - 0.5) < 4 / math.sqrt(n)
    # standard error of the sample variance is sigma^2 sqrt(2/n)
    assert abs(x.var() - 1.0) < 4 * math.sqrt(2 / n)


def test_sampling_two_bumps():
    g = make_grid(1, 1, 128, 24.0)
    vals = 0.6 * gaussian(g, -5.0, 0.7) + 0.8 * gaussian(g, 5.0, 0.7)
    n = 4000
    x = sample_initial_positions(_wave(g, vals), n, seed=2).positions.ravel()
    frac = np.mean(x < 0)
    assert abs(frac - 0.36) < 3 * math.sqrt(0.36 * 0.64 / n)


def test_sampling_rejects_empty():
    g = make_grid(1, 1, 16, 4.0)
    with pytest.raises(ValueError):
        sample_initial_positions(_wave(g, gaussian(g, 0.0, 1.0)), 0, 1)


def test_sampling_is_keyed_per_member():
    g = make_grid(1, 1, 64, 10.0)
    psi = _wave(g, gaussian(g, 0.0, 1.0))
    a = sample_initial_positions(psi, 50, seed=3).positions
    b = sample_initial_positions(psi, 20, seed=3).positions
    assert np.array_equal(a[:20], b)


def test_velocity_of_real_state_is_zero():
    g = make_grid(2, 1, 32, 10.0)
    psi = _wave(g, gaussian(g, (0.5, -1.0), 1.2).real + 0j)
    v = guidance_velocity(psi, BohmianPoint(np.array([[0.3, 0.7]])))
    assert np.max(np.abs(v)) < 1e-12


def test_velocity_of_plane_wave():
    g = make_grid(1, 1, 64, 2 * np.pi)
    psi = _wave(g, np.exp(3j * g.axis))
    v = guidance_velocity(psi, BohmianPoint(np.array([[0.4321]])))
    assert abs(v[0, 0] - 3.0) < 1e-10


def test_velocity_of_chirped_packet():
    g = make_grid(1, 1, 256, 24.0)
    b = 0.4
    psi = _wave(g, gaussian(g, 0.0, 1.5) * np.exp(0.5j * b * g.axis**2))
    for x in (-1.37, 0.21, 2.05):
        v = guidance_velocity(psi, BohmianPoint(np.array([[x]])))
        assert abs(v[0, 0] - b * x) < 1e-6


def test_advance_zero_and_constant_velocity():
    g = make_grid(1, 1, 64, 2 * np.pi)
    P = BohmianPoint(np.array([[0.25]]))
    real = _wave(g, gaussian(g, 0.0, 0.8).real + 0j)
    assert advance_positions(P, real, real, 0.01).positions[0, 0] == 0.25
    wave = _wave(g, np.exp(2j * g.axis))
    out = advance_positions(P, wave, wave, 0.01)
    assert out.positions[0, 0] == pytest.approx(0.25 + 0.02, abs=1e-12)


def test_advance_is_deterministic():
    g = make_grid(1, 1, 64, 10.0)
    a = _wave(g, gaussian(g, 0.0, 1.0, 0.7))
    b = _wave(g, gaussian(g, 0.1, 1.0, 0.7))
    P = BohmianPoint(np.array([[0.3]]))
    assert np.array_equal(advance_positions(P, a, b, 0.01).positions,
                          advance_positions(P, a, b, 0.01).positions)


def test_coherent_state_tracks_classical_center():
    g = make_grid(1, 1, 128, 20.0)
    dyn = Dynamics(g, potential=ExternalPotentialSpec((HarmonicWells(1.0),)))
    x0 = 2.0
    psi = normalize(g, gaussian(g, x0, math.sqrt(0.5)))
    dt = 1e-3
    steps = int(round(2 * math.pi / dt))
    run = evolve_ensemble(dyn, psi, np.array([[[x0]]]), dt, steps,
                          lambda i, t, v, p: {"x": p[:, 0, 0].copy()}, record_stride=50)
    x = np.array([r["x"][0] for r in run.records])
    assert np.max(np.abs(x - x0 * np.cos(run.times))) < 1e-4


def test_h_single_cell_hand_formula():
    g = make_grid(1, 1, 64, 16.0)
    rho = np.full(64, 1 / 16.0)
    cell = 8 * g.spacing
    pts = np.full((500, 1, 1), g.axis[3])
    rep = h_from_density(pts, g, rho, cell)
    # all mass in one cell of volume 2: f = 1/2 there, rho = 1/16
    assert rep.h_value == pytest.approx(math.log(16.0 / cell), rel=1e-12)
    assert rep.cell_size == cell


def test_h_of_equilibrium_ensemble_is_small():
    g = make_grid(1, 1, 128, 16.0)
    psi = _wave(g, gaussian(g, -2.0, 1.0) + 0.7 * gaussian(g, 2.5, 0.8))
    R = 5000
    rep = h_function(sample_initial_positions(psi, R, seed=1), psi)
    cells = 128 // 8
    assert -1e-12 <= rep.h_value < (cells - 1) / (2 * R) + 5 * math.sqrt((cells - 1) / 2) / R
    assert rep.member_count == R


def test_h_rejects_small_cells():
    g = make_grid(1, 1, 16, 4.0)
    with pytest.raises(ValueError):
        h_from_density(np.zeros((3, 1, 1)), g, np.ones(16) / 4, 0.1)


def test_locate_branch():
    regions = [((-10.0,), (-1.0,)), ((1.0,), (10.0,))]
    assert locate_branch(BohmianPoint(np.array([[-3.0]])), regions) == 0
    assert locate_branch(BohmianPoint(np.array([[4.0]])), regions) == 1
    assert locate_branch(BohmianPoint(np.array([[0.0]])), regions) is None


def test_branch_occupancy_matches_weights():
    g = make_grid(1, 1, 128, 24.0)
    vals = math.sqrt(0.3) * gaussian(g, -5.0, 0.8) + math.sqrt(0.7) * gaussian(g, 5.0, 0.8)
    R = 3000
    pts = sample_initial_positions(_wave(g, vals), R, seed=8).positions.reshape(R, 1)
    idx = branch_indices(pts, [((-12.0,), (0.0,)), ((0.0,), (12.0,))])
    assert abs(np.mean(idx == 0) - 0.3) < 3 * math.sqrt(0.21 / R)


def test_ensemble_keys():
    ens = Ensemble.from_positions(np.zeros((3, 1, 1)), seed=9)
    assert ens.stream_keys == [(9, 0), (9, 1), (9, 2)]


def test_trajectories_do_not_cross_in_1d():
    g = make_grid(1, 1, 128, 24.0)
    psi = normalize(g, gaussian(g, -2.0, 1.0, 1.0) + gaussian(g, 2.0, 1.0, -1.0))
    ens = sample_initial_positions(WaveFunction(g, psi), 60, seed=5)
    dyn = Dynamics(g)
    run = evolve_ensemble(dyn, psi, ens.positions, 2e-3, 1500,
                          lambda i, t, v, p: {"x": p[:, 0, 0].copy()}, record_stride=25)
    order = np.argsort(run.records[0]["x"])
    for r in run.records:
        assert np.all(np.diff(r["x"][order]) > 0)


def test_equilibrium_is_preserved_without_collapse():
    g = make_grid(1, 1, 64, 16.0)
    psi = normalize(g, gaussian(g, -2.0, 1.0, 0.8) + gaussian(g, 2.0, 1.2, -0.5))
    R = 2000
    ens = sample_initial_positions(WaveFunction(g, psi), R, seed=6)
    dyn = Dynamics(g)
    run = evolve_ensemble(dyn, psi, ens.positions, 5e-3, 400,
                          lambda i, t, v, p: {"p": p.copy(), "rho": np.abs(v[:1]) ** 2},
                          record_stride=100)
    cells = 64 // 8
    band = (cells - 1) / (2 * R) + 5 * math.sqrt((cells - 1) / 2) / R
    for r in run.records:
        assert h_from_density(r["p"], g, r["rho"][0]).h_value < band


@settings(max_examples=20, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-0.2, 0.2))
def test_plane_wave_advance_is_exact_shift(x, k_shift):
    g = make_grid(1, 1, 32, 2 * np.pi)
    wave = _wave(g, np.exp(1j * g.axis))
    out = advance_positions(BohmianPoint(np.array([[x]])), wave, wave, 0.05 + k_shift * 0.1)
    expect = g.wrap(x + 0.05 + k_shift * 0.1)
    assert abs(g.min_image(out.positions[0, 0] - expect)) < 1e-10
