import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gbclab.grid import Field, make_grid
from gbclab.gravity import (GravityParams, GravitySample, linear_sample, localization_rate,
                            pairwise_potential_energy, potential_from_positions)
from gbclab.grid import spectral_derivative
from gbclab.states import BohmianPoint


def _brute_potential(grid, sources, kappa, a, point):
    total = 0.0
    for q in sources:
        s = grid.min_image(np.asarray(point) - q)
        total += 1.0 / np.sqrt(np.dot(s, s) + a * a)
    return kappa * total


def test_single_source_closed_form():
    g = make_grid(1, 1, 64, 16.0)
    p = GravityParams(kappa=2.0, softening=0.5)
    s = potential_from_positions(BohmianPoint(np.array([[0.0]])), g, p)
    i0 = 32
    assert s.abs_potential.values[i0] == 2.0 / 0.5
    r = g.axis
    assert np.allclose(s.abs_potential.values, 2.0 / np.sqrt(r**2 + 0.25), atol=1e-14)


def test_symmetric_sources():
    g = make_grid(1, 1, 64, 16.0)
    s = potential_from_positions(BohmianPoint(np.array([[-2.0], [2.0]])), g,
                                 GravityParams(softening=0.4))
    v, f = s.abs_potential.values, s.force.values[0]
    # node i maps to -x at node (M - i) % M
    mirror = (-np.arange(64)) % 64
    assert np.max(np.abs(v - v[mirror])) < 1e-12
    assert np.max(np.abs(f + f[mirror])) < 1e-12


def test_random_sources_vs_brute_force():
    rng = np.random.default_rng(3)
    g = make_grid(2, 1, 32, 10.0)
    q = rng.uniform(-5, 5, size=(5, 2))
    p = GravityParams(kappa=0.7, softening=0.3)
    s = potential_from_positions(BohmianPoint(q), g, p)
    for _ in range(100):
        i, j = rng.integers(0, 32, 2)
        expect = _brute_potential(g, q, 0.7, 0.3, (g.axis[i], g.axis[j]))
        assert abs(s.abs_potential.values[i, j] - expect) < 1e-12


def test_force_is_spectral_gradient():
    g = make_grid(1, 1, 128, 16.0)
    s = potential_from_positions(BohmianPoint(np.array([[0.7]])), g, GravityParams(softening=1.0))
    grad = spectral_derivative(s.abs_potential.values, g, 0)
    assert np.max(np.abs(grad - s.force.values[0])) < 1e-10
    assert np.all(s.abs_potential.values >= 0)


def test_pairwise_energy_examples():
    p = GravityParams(kappa=1.5, softening=0.5)
    assert pairwise_potential_energy([[1.0]], [[1.0]], p) == pytest.approx(-1.5 / 0.5)
    r = np.array([[0.0], [3.0]])
    expect = -1.5 * (2 / 0.5 + 2 / np.sqrt(9 + 0.25))
    assert pairwise_potential_energy(r, r, p) == pytest.approx(expect, rel=1e-14)
    off = GravityParams(kappa=1.5, softening=0.5, include_hermitian_gravity=False)
    assert pairwise_potential_energy(r, r, off) == 0.0


def test_pairwise_energy_double_loop():
    rng = np.random.default_rng(5)
    r, q = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    p = GravityParams(kappa=0.9, softening=0.2)
    expect = -0.9 * sum(1 / np.sqrt(np.sum((a - b) ** 2) + 0.04) for a in r for b in q)
    assert abs(pairwise_potential_energy(r, q, p) - expect) < 1e-12
    noself = GravityParams(kappa=0.9, softening=0.2, self_interaction=False)
    expect2 = -0.9 * sum(1 / np.sqrt(np.sum((r[n] - q[j]) ** 2) + 0.04)
                         for n in range(3) for j in range(3) if n != j)
    assert abs(pairwise_potential_energy(r, q, noself) - expect2) < 1e-12


def test_pairwise_energy_needs_softening_without_grid():
    with pytest.raises(ValueError):
        pairwise_potential_energy([[0.0]], [[0.0]], GravityParams())


def _gaussian_density(g, c=0.0, s=1.0):
    return Field(g, np.exp(-(g.axis - c) ** 2 / (2 * s * s)) / np.sqrt(2 * np.pi * s * s))


def test_localization_rate_trivial_cases():
    g = make_grid(1, 1, 128, 20.0)
    dens = _gaussian_density(g)
    flat = GravitySample.from_potential(Field(g, np.full(128, 3.0)))
    p = GravityParams(epsilon=0.1)
    assert localization_rate([[0.4]], dens, flat, p) == pytest.approx(0.0, abs=1e-14)
    s = potential_from_positions(BohmianPoint(np.array([[1.0]])), g, GravityParams(softening=1.0))
    assert localization_rate([[0.4]], dens, s, GravityParams(epsilon=0.0)) == 0.0


def test_localization_rate_quadrature():
    from scipy.integrate import quad
    g = make_grid(1, 1, 256, 24.0)
    dens = _gaussian_density(g, 0.0, 1.0)
    p = GravityParams(kappa=1.0, epsilon=0.05, softening=1.0)
    s = potential_from_positions(BohmianPoint(np.array([[1.5]])), g, p)
    r = g.axis[140]
    u = lambda x: 1 / np.sqrt((x - 1.5) ** 2 + 1.0)
    avg = quad(lambda x: np.exp(-x**2 / 2) / np.sqrt(2 * np.pi) * u(x), -12, 12,
               epsabs=1e-13, limit=200)[0]
    expect = 0.05 * (u(r) - avg)
    assert abs(localization_rate([[r]], dens, s, p) - expect) < 1e-8


def test_localization_rate_checks_normalization():
    g = make_grid(1, 1, 64, 20.0)
    bad = Field(g, 2 * _gaussian_density(g).values)
    s = GravitySample.from_potential(Field(g, np.ones(64)))
    with pytest.raises(ValueError):
        localization_rate([[0.0]], bad, s, GravityParams(epsilon=0.1))


def test_params_validation():
    for kw in ({"kappa": -1}, {"epsilon": 1.5}, {"softening": 0.0}):
        with pytest.raises(ValueError):
            GravityParams(**kw)


def test_linear_sample():
    g = make_grid(1, 1, 32, 10.0)
    s = linear_sample(g, 0.2, origin=0.0, offset=1.0)
    assert np.allclose(s.abs_potential.values, 1.0 + 0.2 * g.axis)
    assert np.all(s.force.values == 0.2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_potential_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    g = make_grid(2, 1, 16, 6.0)
    q = rng.uniform(-3, 3, size=(4, 2))
    p = GravityParams(softening=0.5)
    a = potential_from_positions(BohmianPoint(q), g, p).abs_potential.values
    b = potential_from_positions(BohmianPoint(q[rng.permutation(4)]), g, p).abs_potential.values
    assert np.max(np.abs(a - b)) < 1e-12


def test_force_curl_free_2d():
    g = make_grid(2, 1, 64, 12.0)
    q = np.array([[0.5, -1.0], [-2.0, 2.0]])
    s = potential_from_positions(BohmianPoint(q), g, GravityParams(softening=1.0))
    fx, fy = s.force.values
    curl = spectral_derivative(fy, g, 0) - spectral_derivative(fx, g, 1)
    assert np.max(np.abs(curl)) < 1e-8 * np.max(np.abs(s.force.values))


def test_localization_rate_mean_zero_under_sampling():
    # configurations drawn from |psi|^2 average to zero rate
    g = make_grid(1, 1, 256, 24.0)
    dens = _gaussian_density(g)
    p = GravityParams(kappa=1.0, epsilon=0.1, softening=1.0)
    s = potential_from_positions(BohmianPoint(np.array([[0.8]])), g, p)
    rng = np.random.default_rng(9)
    n = 4000
    rates = np.array([localization_rate([[x]], dens, s, p) for x in rng.normal(size=n)])
    assert abs(rates.mean()) < 4 * rates.std() / np.sqrt(n)
