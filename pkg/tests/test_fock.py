import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gbclab import fock
from gbclab import observables as obs
from gbclab.gravity import GravitySample, linear_sample
from gbclab.grid import Field, make_grid
from gbclab.scenarios.dilute import sine_sample

L = 10.0


def _ring(occ, idx, M=64, length=L):
    return fock.ModeSet(occ, "ring", tuple((i,) for i in idx), length), make_grid(1, 1, M, length)


def test_single_mode_has_no_correlation():
    ms, g = _ring((3,), (2,))
    assert np.max(np.abs(fock.fock_correlation(ms, g).values)) == 0.0
    assert np.max(np.abs(fock.fock_correlation_oracle(ms, g).values)) < 1e-15


def test_two_plane_waves_hand_formula():
    ms, g = _ring((1, 1), (1, 3))
    F = fock.fock_correlation(ms, g).values
    dk = 2 * np.pi * 2 / L
    x = g.axis
    # n_k (n_k' + 1) = 2 for both ordered pairs, each carrying 1/L^2
    hand = 4 / L**2 * np.cos(dk * (x[:, None] - x[None, :]))
    assert np.max(np.abs(F - hand)) < 1e-12
    assert np.allclose(np.diag(F).real, 4 / L**2, atol=1e-14)


def test_oracle_two_one_one():
    ms = fock.ModeSet((2, 1, 1), "oscillator", ((0,), (1,), (2,)), 1.0)
    g = make_grid(1, 1, 64, 16.0)
    a, b = fock.fock_correlation(ms, g), fock.fock_correlation_oracle(ms, g)
    assert np.max(np.abs(a.values - b.values)) < 1e-10
    assert np.max(np.abs(a.density - b.density)) < 1e-12


def test_oracle_hand_case():
    ms, g = _ring((1, 1), (1, 3))
    F = fock.fock_correlation_oracle(ms, g).values
    x = g.axis
    hand = 4 / L**2 * np.cos(2 * np.pi * 2 / L * (x[:, None] - x[None, :]))
    assert np.max(np.abs(F - hand)) < 1e-12


def test_current_oracle():
    r = 1 / math.sqrt(2)
    ms = fock.ModeSet((2, 1, 1), "oscillator", ((0,), (1,), (2,), (3,)), 1.0,
                      mixing=np.array([[1, 0, 0, 0], [0, r, 1j * r, 0], [0, 0, 0, 1]]))
    g = make_grid(1, 1, 64, 16.0)
    a, b = fock.fock_current_correlation(ms, g), fock.fock_current_correlation_oracle(ms, g)
    assert np.max(np.abs(a.values)) > 1e-3
    assert np.max(np.abs(a.values - b.values)) < 1e-10
    assert np.max(np.abs(a.current - b.current)) < 1e-12


def test_oracle_limits():
    ms = fock.ModeSet((1,) * 5, "ring", tuple((i,) for i in range(5)), L)
    with pytest.raises(fock.ModeSetError):
        fock.fock_correlation_oracle(ms, make_grid(1, 1, 32, L))
    big = fock.ModeSet((4, 3), "ring", ((0,), (1,)), L)
    with pytest.raises(fock.ModeSetError):
        fock.fock_correlation_oracle(big, make_grid(1, 1, 32, L))


def test_mode_set_validation():
    with pytest.raises(fock.ModeSetError):
        fock.ModeSet((1,), "box", ((0,),), 1.0)
    with pytest.raises(fock.ModeSetError):
        fock.ModeSet((1, 1), "ring", ((0,),), 1.0)
    with pytest.raises(fock.ModeSetError):
        fock.ModeSet((1, 1), "ring", ((0,), (1,)), 1.0, mixing=np.ones((2, 2)))
    # an oscillator width unresolved by the grid fails the overlap check
    coarse = fock.ModeSet((1, 1), "oscillator", ((0,), (7,)), 0.2)
    with pytest.raises(fock.ModeSetError):
        fock.fock_correlation(coarse, make_grid(1, 1, 16, 10.0))
    with pytest.raises(fock.ModeSetError):
        fock.fock_correlation(_ring((1, 1), (1, 2))[0], make_grid(1, 1, 32, 12.0))


def test_mode_counts():
    ms = fock.ModeSet((2, 1, 1), "oscillator", ((0,), (1,), (2,)), 1.0)
    assert ms.mode_count == 3 and ms.particle_count == 4
    g = make_grid(1, 1, 64, 16.0)
    assert abs(np.sum(ms.density(g)) * g.spacing - 4) < 1e-10


def test_correlation_length_two_plane_waves():
    ms, g = _ring((1, 1), (1, 3), M=64)
    lam = fock.correlation_length(fock.fock_correlation(ms, g))
    dk = 2 * np.pi * 2 / L
    assert lam == pytest.approx(math.pi / (2 * dk), rel=1e-6)


def test_correlation_length_of_zero_is_an_error():
    ms, g = _ring((2,), (1,))
    with pytest.raises(ValueError):
        fock.correlation_length(fock.fock_correlation(ms, g))


def test_correlation_length_gaussian_envelope():
    g = make_grid(1, 1, 256, 40.0)
    x = g.axis
    w = 1.5
    s = g.min_image(x[:, None] - x[None, :])
    vals = np.exp(-s**2 / (2 * w * w))
    F = obs.CorrelationData("F", g, vals, np.zeros(256), np.ones(256))
    assert fock.correlation_length(F) == pytest.approx(w * math.sqrt(2), rel=1e-4)


def test_rate_of_single_mode_and_flat_potential():
    ms, g = _ring((3,), (1,))
    s = linear_sample(g, 0.2, offset=1.0)
    assert np.max(np.abs(fock.fock_density_rate(ms, s, 0.1).values.values)) == 0.0
    ms2, _ = _ring((1, 2), (1, 4))
    flat = GravitySample.from_potential(Field(g, np.full(64, 2.0)))
    assert np.max(np.abs(fock.fock_density_rate(ms2, flat, 0.1).values.values)) < 1e-15


def test_rate_matches_dense_form():
    ms = fock.ModeSet((2, 1, 1), "oscillator", ((0,), (1,), (3,)), 1.0)
    g = make_grid(1, 1, 128, 20.0)
    s = sine_sample(g, 1.0, 0.2, 3.0, 0.4)
    dense = obs.density_rate_full(fock.fock_correlation(ms, g), s, 0.1).values.values
    lean = fock.fock_density_rate(ms, s, 0.1).values.values
    assert np.max(np.abs(dense - lean)) < 1e-14


def test_plane_waves_linear_potential_at_origin():
    ms, g = _ring((1, 1), (1, 3))
    s = linear_sample(g, 0.1, offset=1.0)
    full = fock.fock_density_rate(ms, s, 0.1).values.values
    grad = obs.density_rate_gradient(fock.fock_correlation(ms, g), s, 0.1).values.values
    i = obs.node_index(g, 0.0)
    assert abs(full[i] - grad[i]) < 1e-6


def test_timescale_examples():
    p = fock.SiParams(1e-3, 1e-25, 1e-9, 1e26)
    tau = fock.collapse_timescale_si(p)
    assert tau == pytest.approx(1.054571817e-34 / (1e-3 * 1e-25 * 1e-36 * 1e26), rel=1e-14)
    assert 1e4 <= tau <= 1e8
    wide = fock.SiParams(1e-3, 1e-25, 1e-7, 1e26)
    assert tau / fock.collapse_timescale_si(wide) == pytest.approx(1e8, rel=1e-12)
    doubled = fock.SiParams(2e-3, 1e-25, 1e-9, 1e26)
    assert fock.collapse_timescale_si(doubled) == pytest.approx(tau / 2, rel=1e-15)


def test_timescale_validation():
    for args in ((0.0, 1, 1, 1), (2.0, 1, 1, 1), (0.1, -1, 1, 1), (0.1, 1, 0, 1)):
        with pytest.raises(ValueError):
            fock.SiParams(*args)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-4, 1.0), st.floats(1e-30, 1e-20), st.floats(1e-10, 1e-6),
       st.floats(1e20, 1e30), st.floats(0.5, 4.0))
def test_timescale_is_a_monomial(eps, force, lam, dens, c):
    base = fock.collapse_timescale_si(fock.SiParams(eps, force, lam, dens))
    assert fock.collapse_timescale_si(fock.SiParams(eps, force, lam * c, dens)) == \
        pytest.approx(base / c**4, rel=1e-12)
    assert fock.collapse_timescale_si(fock.SiParams(eps, force * c, lam, dens)) == \
        pytest.approx(base / c, rel=1e-12)
    assert fock.collapse_timescale_si(fock.SiParams(eps, force, lam, dens * c)) == \
        pytest.approx(base / c, rel=1e-12)
    if eps * c <= 1:
        assert fock.collapse_timescale_si(fock.SiParams(eps * c, force, lam, dens)) == \
            pytest.approx(base / c, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=5),
       st.sampled_from(["ring", "oscillator"]))
def test_sum_rules_and_positivity(occ, family):
    p = len(occ)
    if family == "ring":
        ms = fock.ModeSet(tuple(occ), "ring", tuple((i - 2,) for i in range(p)), L)
        g = make_grid(1, 1, 32, L)
    else:
        ms = fock.ModeSet(tuple(occ), "oscillator", tuple((i,) for i in range(p)), 1.0)
        g = make_grid(1, 1, 64, 16.0)
    F = fock.fock_correlation(ms, g)
    scale = max(F.scale(), 1e-300)
    assert np.max(np.abs(F.row_integral())) < 1e-10 * max(scale, 1.0)
    assert np.all(np.real(np.diag(F.values)) >= -1e-14 * scale)
    if ms.particle_count <= fock.ORACLE_MAX_PARTICLES and p <= fock.ORACLE_MAX_MODES:
        O = fock.fock_correlation_oracle(ms, g)
        assert np.max(np.abs(F.values - O.values)) < 1e-10


def test_envelope_decays_for_spread_momenta():
    length = 400.0
    ns = np.arange(-30, 31)
    occ = np.maximum(1, np.round(4 * np.exp(-ns**2 / (2 * 10.0**2)))).astype(int)
    ms = fock.ModeSet(tuple(occ), "ring", tuple((int(n),) for n in ns), length)
    g = make_grid(1, 1, 512, length)
    k = 2 * np.pi * ns / length
    dk = math.sqrt(np.sum(occ * k**2) / occ.sum() - (np.sum(occ * k) / occ.sum()) ** 2)
    F = fock.fock_correlation(ms, g, rows=[256])
    s = np.abs(g.min_image(g.axis - g.axis[256]))
    row = np.abs(F.values[0])
    far = s > 10 / dk
    assert far.any()
    assert row[far].max() < 0.1 * row.max()
