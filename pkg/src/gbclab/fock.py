"""Correlation functions of number states built from analytic single-particle modes.

For occupations n_k of orthonormal modes phi_k the density correlation is

    F(r, r') = sum_{k != k'} n_k (n_k' + 1) phi_k^*(r) phi_k'(r) phi_k'^*(r') phi_k(r')

and the symmetrized current-density correlation is

    K(r, r') = sum_{k != l} n_k (n_l + 1) Re[ j_kl(r) d_lk(r') ],

with d_lk = phi_l^* phi_k and j_kl = (phi_k^* grad phi_l - grad phi_k^* phi_l) / 2i.
Both are complex in general (Hermitian as pair matrices); rates use the
real part.  All sums run over the modes of the set only, so no separate
contact term appears.  Units: hbar = m = 1 except in the SI estimator.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
from scipy.interpolate import CubicSpline, PchipInterpolator

from .grid import Field, Grid
from .gravity import GravitySample
from .observables import CorrelationData, RateField

ORTHO_TOL = 1e-10
ORACLE_MAX_MODES = 4
ORACLE_MAX_PARTICLES = 6


class ModeSetError(ValueError):
    pass


@dataclass(frozen=True)
class ModeSet:
    """Occupied modes from one analytic family.

    ``family`` is "ring" (plane waves exp(2 pi i n.x / length) on a periodic
    box of side ``length``) or "oscillator" (harmonic-oscillator
    eigenfunctions of width ``length`` about ``center``).  ``indices`` holds
    one d-tuple of quantum numbers per basis function.  Without ``mixing``
    the modes are the basis functions; otherwise mode k is
    sum_b mixing[k, b] * basis_b (rows must be orthonormal).
    """
    occupations: tuple[int, ...]
    family: str
    indices: tuple[tuple[int, ...], ...]
    length: float
    dims: int = 1
    center: tuple[float, ...] | None = None
    mixing: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in ("ring", "oscillator"):
            raise ModeSetError(f"unknown mode family {self.family!r}")
        if not self.length > 0:
            raise ModeSetError("mode length scale must be positive")
        occ = tuple(int(n) for n in self.occupations)
        if any(n < 0 for n in occ):
            raise ModeSetError("occupations must be >= 0")
        object.__setattr__(self, "occupations", occ)
        idx = tuple(tuple(int(i) for i in np.atleast_1d(t)) for t in self.indices)
        if any(len(t) != self.dims for t in idx):
            raise ModeSetError(f"every index must have {self.dims} components")
        if self.family == "oscillator" and any(i < 0 for t in idx for i in t):
            raise ModeSetError("oscillator quantum numbers must be >= 0")
        object.__setattr__(self, "indices", idx)
        nbasis = len(idx)
        if self.mixing is None:
            if len(occ) != nbasis:
                raise ModeSetError(f"{len(occ)} occupations for {nbasis} modes")
        else:
            mix = np.asarray(self.mixing, dtype=complex)
            if mix.shape != (len(occ), nbasis):
                raise ModeSetError(f"mixing matrix must be {(len(occ), nbasis)}")
            if np.max(np.abs(mix @ mix.conj().T - np.eye(len(occ)))) > ORTHO_TOL:
                raise ModeSetError("mixing rows are not orthonormal")
            object.__setattr__(self, "mixing", mix)

    @property
    def mode_count(self) -> int:
        return len(self.occupations)

    @property
    def particle_count(self) -> int:
        return sum(self.occupations)

    # -- mode values ------------------------------------------------------
    def _basis(self, grid: Grid):
        """Basis values (B, *shape) and gradients (B, d, *shape) on a physical grid."""
        g = grid.physical()
        if g.ndim != self.dims:
            raise ModeSetError(f"grid has {g.ndim} dims, modes have {self.dims}")
        mesh = g.mesh()
        vals, grads = [], []
        if self.family == "ring":
            if abs(g.extent - self.length) > 1e-12 * self.length:
                raise ModeSetError("ring modes need a grid whose extent equals the ring length")
            for n in self.indices:
                k = 2 * np.pi * np.asarray(n) / self.length
                phase = sum(ki * x for ki, x in zip(k, mesh))
                v = np.broadcast_to(np.exp(1j * phase), g.shape) / self.length ** (self.dims / 2)
                vals.append(v)
                grads.append(np.stack([1j * ki * v for ki in k]))
        else:
            c = np.zeros(self.dims) if self.center is None else np.asarray(self.center, float)
            nmax = max(max(t) for t in self.indices) + 1
            tables = [_oscillator_table(g.min_image(x.reshape(-1) - ci), self.length, nmax)
                      for x, ci in zip(mesh, c)]
            for n in self.indices:
                v = np.ones(g.shape, dtype=complex)
                parts = []
                for a in range(self.dims):
                    shp = [1] * self.dims
                    shp[a] = g.points_per_axis
                    parts.append((tables[a][0][n[a]].reshape(shp), tables[a][1][n[a]].reshape(shp)))
                for f, _ in parts:
                    v = v * f
                gr = []
                for a in range(self.dims):
                    term = np.ones(g.shape, dtype=complex)
                    for b, (f, df) in enumerate(parts):
                        term = term * (df if a == b else f)
                    gr.append(term)
                vals.append(v)
                grads.append(np.stack(gr))
        return np.array(vals), np.array(grads)

    def values(self, grid: Grid, check: bool = True):
        """Mode values (p, *shape) and gradients (p, d, *shape)."""
        vals, grads = self._basis(grid)
        if self.mixing is not None:
            vals = np.tensordot(self.mixing, vals, axes=1)
            grads = np.tensordot(self.mixing, grads, axes=1)
        if check:
            self.check_orthonormal(grid, vals)
        return vals, grads

    def check_orthonormal(self, grid: Grid, vals=None) -> float:
        g = grid.physical()
        if vals is None:
            vals, _ = self.values(g, check=False)
        X = vals.reshape(len(vals), -1)
        overlap = (X.conj() @ X.T) * g.cell_volume
        err = float(np.max(np.abs(overlap - np.eye(len(X)))))
        if err > ORTHO_TOL:
            raise ModeSetError(f"modes are not orthonormal on this grid (error {err:.2e})")
        return err

    def density(self, grid: Grid) -> np.ndarray:
        vals, _ = self.values(grid)
        n = np.asarray(self.occupations, float)
        return np.tensordot(n, np.abs(vals) ** 2, axes=1).real


def _oscillator_table(x: np.ndarray, sigma: float, nmax: int):
    """Normalized oscillator eigenfunctions of width sigma and their derivatives."""
    u = x / sigma
    psi = np.zeros((nmax + 1, len(x)))
    psi[0] = np.pi ** -0.25 * np.exp(-u * u / 2) / math.sqrt(sigma)
    if nmax >= 1:
        psi[1] = math.sqrt(2.0) * u * psi[0]
    for n in range(2, nmax + 1):
        psi[n] = math.sqrt(2.0 / n) * u * psi[n - 1] - math.sqrt((n - 1) / n) * psi[n - 2]
    dpsi = np.zeros((nmax, len(x)))
    for n in range(nmax):
        lower = math.sqrt(n / 2) * psi[n - 1] if n > 0 else 0.0
        dpsi[n] = (lower - math.sqrt((n + 1) / 2) * psi[n + 1]) / sigma
    return psi[:nmax], dpsi


def _pair_weights(occ) -> np.ndarray:
    n = np.asarray(occ, dtype=float)
    w = np.outer(n, n + 1)
    np.fill_diagonal(w, 0.0)
    return w


def _flat(vals: np.ndarray) -> np.ndarray:
    return vals.reshape(vals.shape[0], -1)


def fock_correlation(ms: ModeSet, grid: Grid, rows=None) -> CorrelationData:
    """Density correlation F of a number state, sampled on a physical grid.

    ``rows`` restricts the first argument r to the given flat grid indices;
    the result then holds only those rows.
    """
    g = grid.physical()
    vals, _ = ms.values(g)
    X = _flat(vals)
    w = _pair_weights(ms.occupations)
    dens = np.tensordot(np.asarray(ms.occupations, float), np.abs(X) ** 2, axes=1)
    Xr = X if rows is None else X[:, np.atleast_1d(rows)]
    # F(r, r') = sum_{kl} w_kl conj(X_k(r)) X_l(r) conj(X_l(r')) X_k(r')
    #          = sum_k conj(X_k(r)) X_k(r') * [sum_l w_kl X_l(r) conj(X_l(r'))]
    F = np.zeros((Xr.shape[1], X.shape[1]), dtype=complex)
    for k in range(len(X)):
        if not np.any(w[k]):
            continue
        inner = (Xr * w[k][:, None]).T @ X.conj()
        F += np.conj(Xr[k])[:, None] * X[k][None, :] * inner
    contact = np.zeros(Xr.shape[1])
    return CorrelationData("F", g, F, contact, dens)


def _current_pairs(vals, grads):
    """j_kl(r) = (phi_k^* grad phi_l - grad phi_k^* phi_l) / 2i as (p, p, d, G)."""
    X = _flat(vals)
    D = grads.reshape(grads.shape[0], grads.shape[1], -1)
    a = np.conj(X)[:, None, None, :] * D[None, :, :, :]
    b = np.conj(D)[:, None, :, :] * X[None, :, None, :]
    return (a - b) / 2j


def fock_current_correlation(ms: ModeSet, grid: Grid) -> CorrelationData:
    """Symmetrized current-density correlation K_i(r, r') of a number state."""
    g = grid.physical()
    vals, grads = ms.values(g)
    X = _flat(vals)
    j = _current_pairs(vals, grads)
    w = _pair_weights(ms.occupations)
    n = np.asarray(ms.occupations, float)
    dens = np.tensordot(n, np.abs(X) ** 2, axes=1)
    cur = np.einsum("k,kdr->dr", n, np.real(j[np.arange(len(n)), np.arange(len(n))]))
    G = X.shape[1]
    K = np.zeros((g.ndim, G, G))
    for k, l in itertools.product(range(len(n)), repeat=2):
        if w[k, l] == 0:
            continue
        d_lk = np.conj(X[l]) * X[k]
        K += w[k, l] * np.real(j[k, l][:, :, None] * d_lk[None, None, :])
    return CorrelationData("K", g, K, np.zeros((g.ndim, G)), dens, cur)


def contact_projection(ms: ModeSet, grid: Grid) -> np.ndarray:
    """G(r, r') C(r, r') with G = sum_k n_k phi_k^*(r) phi_k(r') and
    C = sum_l phi_l(r) phi_l^*(r') over the mode set.

    The same-particle term that the mode-restricted formula carries off the
    diagonal; subtracting it from ``fock_correlation`` gives the grid pair
    part of a first-quantized state built from the same modes.
    """
    g = grid.physical()
    vals, _ = ms.values(g)
    X = _flat(vals)
    n = np.asarray(ms.occupations, float)
    Gm = (np.conj(X).T * n) @ X
    C = X.T @ np.conj(X)
    return Gm * C


# ---------------------------------------------------------------- oracle

def _ladder_ops(p: int, nmax: int):
    dim = nmax + 1
    a1 = sparse.diags(np.sqrt(np.arange(1, dim)), 1, format="csr")
    eye = sparse.identity(dim, format="csr")
    ops = []
    for k in range(p):
        op = None
        for m in range(p):
            f = a1 if m == k else eye
            op = f if op is None else sparse.kron(op, f, format="csr")
        ops.append(op)
    return ops


def _number_state(occ, nmax: int) -> np.ndarray:
    dim = nmax + 1
    idx = 0
    for n in occ:
        idx = idx * dim + n
    v = np.zeros(dim ** len(occ), dtype=complex)
    v[idx] = 1.0
    return v


def _oracle_moments(ms: ModeSet):
    p, N = ms.mode_count, ms.particle_count
    if p > ORACLE_MAX_MODES or N > ORACLE_MAX_PARTICLES:
        raise ModeSetError(
            f"oracle limited to {ORACLE_MAX_MODES} modes and {ORACLE_MAX_PARTICLES} particles")
    a = _ladder_ops(p, max(N, 1) + 1)
    state = _number_state(ms.occupations, max(N, 1) + 1)
    # v[k, l] = a_k^dagger a_l |state>
    v = np.array([[a[k].T.conj() @ (a[l] @ state) for l in range(p)] for k in range(p)])
    one = np.einsum("i,kli->kl", state.conj(), v)  # <a_k^dag a_l>
    # <a_k^dag a_l a_k'^dag a_l'> = (a_l^dag a_k |s>)^dag (a_k'^dag a_l' |s>)
    two = np.einsum("lki,mni->klmn", v.conj(), v)
    return one, two


def fock_correlation_oracle(ms: ModeSet, grid: Grid) -> CorrelationData:
    """F from explicit ladder-operator algebra on the truncated Fock space."""
    g = grid.physical()
    vals, _ = ms.values(g)
    X = _flat(vals)
    one, two = _oracle_moments(ms)
    d = np.conj(X)[:, None, :] * X[None, :, :]  # d[k, l] = phi_k^* phi_l
    dens = np.einsum("kl,klr->r", one, d)
    DD = np.einsum("klmn,klr,mns->rs", two, d, d)
    F = DD - np.outer(dens, dens)
    return CorrelationData("F", g, F, np.zeros(X.shape[1]), dens.real)


def fock_current_correlation_oracle(ms: ModeSet, grid: Grid) -> CorrelationData:
    """K from the operator algebra: (<J D'> + <D' J>)/2 - <J><D'>."""
    g = grid.physical()
    vals, grads = ms.values(g)
    X = _flat(vals)
    one, two = _oracle_moments(ms)
    d = np.conj(X)[:, None, :] * X[None, :, :]
    j = _current_pairs(vals, grads)
    dens = np.einsum("kl,klr->r", one, d).real
    cur = np.einsum("kl,klar->ar", one, j).real
    JD = np.einsum("klmn,klar,mns->ars", two, j, d)
    DJ = np.einsum("mnkl,klar,mns->ars", two, j, d)
    K = 0.5 * (JD + DJ) - cur[:, :, None] * dens[None, None, :]
    return CorrelationData("K", g, np.real(K), np.zeros((g.ndim, X.shape[1])), dens, cur)


# ---------------------------------------------------------------- lengths

def correlation_profile(F: CorrelationData) -> tuple[np.ndarray, np.ndarray]:
    """Density-weighted, angle-averaged F(r, r + s) as (s, profile).

    The contact term enters at s = 0.  In d > 1 separations are binned by
    |s| in steps of the grid spacing.
    """
    g = F.grid
    M, d = g.points_per_axis, g.ndim
    vals = np.real(F.values).reshape(g.shape + g.shape)
    dens = np.asarray(F.density, float).reshape(g.shape)
    total = dens.sum()
    if total <= 0:
        raise ValueError("correlation data carry no density")
    shifted = np.zeros(g.shape)
    # average over r of D(r) F(r, r + s) for every grid offset s
    for idx in itertools.product(range(M), repeat=d):
        row = vals[idx]
        shifted += dens[idx] * np.roll(row, [-i for i in idx], axis=tuple(range(d)))
    shifted /= total
    contact = np.asarray(F.contact_weight, float).reshape(g.shape)
    shifted.flat[0] += float(np.sum(dens * contact) / total)
    offsets = np.fft.fftfreq(M, d=1.0 / M)  # integer offsets, signed
    radius = np.sqrt(sum(np.asarray(o, float) ** 2 for o in np.meshgrid(*([offsets] * d),
                                                                          indexing="ij")))
    bins = np.round(radius).astype(int)
    nb = M // 2 + 1
    keep = bins < nb
    sums = np.bincount(bins[keep], weights=shifted[keep], minlength=nb)
    counts = np.bincount(bins[keep], minlength=nb)
    prof = sums / np.maximum(counts, 1)
    return np.arange(nb) * g.spacing, prof


def correlation_length(F: CorrelationData) -> float:
    """Smallest s where the profile first crosses zero; else its 1/e point."""
    s, prof = correlation_profile(F)
    scale = max(F.scale(), 1e-300)
    if np.max(np.abs(prof)) <= 1e-14 * scale or F.scale() == 0:
        raise ValueError("correlation function vanishes; correlation length undefined")
    if prof[0] <= 0:
        raise ValueError("correlation profile is not positive at zero separation")
    has_contact = np.any(np.asarray(F.contact_weight) != 0)
    interp = PchipInterpolator if has_contact else CubicSpline
    below = np.flatnonzero(prof <= 0)
    if len(below):
        j = below[0]
        return _first_root(interp, s, prof, j)
    target = prof - prof[0] / math.e
    below = np.flatnonzero(target <= 0)
    if not len(below):
        raise ValueError("correlation profile neither changes sign nor decays to 1/e")
    return _first_root(interp, s, target, below[0])


def _first_root(interp, s, y, j) -> float:
    lo, hi = max(0, j - 3), min(len(s), j + 3)
    spline = interp(s[lo:hi], y[lo:hi])
    roots = [float(r) for r in np.atleast_1d(spline.roots(extrapolate=False))
             if s[j - 1] - 1e-12 <= r <= s[j] + 1e-12]
    if not roots:
        # linear fallback inside the bracketing cell
        return float(s[j - 1] + (s[j] - s[j - 1]) * y[j - 1] / (y[j - 1] - y[j]))
    return min(roots)


# ---------------------------------------------------------------- rates, SI

def fock_density_rate(ms: ModeSet, gsample: GravitySample, epsilon: float) -> RateField:
    """2 eps integral dr' |V_G(r')| F(r, r') without storing F.

    sum_{kl} w_kl conj(X_k) X_l (r) * <X_l | V | X_k>, which stays O(p^2 G).
    """
    g = gsample.abs_potential.grid
    vals, _ = ms.values(g)
    X = _flat(vals)
    V = gsample.abs_potential.values.reshape(-1)
    w = _pair_weights(ms.occupations)
    Vm = (np.conj(X) * V) @ X.T * g.cell_volume  # Vm[l, k] = <X_l|V|X_k>
    rate = np.einsum("kl,kr,lr,lk->r", w, np.conj(X), X, Vm)
    return RateField(Field(g, (2 * epsilon * np.real(rate)).reshape(g.shape)), "full-integral")


@dataclass(frozen=True)
class SiParams:
    epsilon: float
    force: float      # N
    lambda_c: float   # m
    density: float    # m^-3
    hbar: float = 1.054571817e-34  # J s

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        for name in ("force", "lambda_c", "density", "hbar"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def collapse_timescale_si(p: SiParams) -> float:
    """tau = hbar / (eps F_G lambda_c^4 <D>) in seconds."""
    return p.hbar / (p.epsilon * p.force * p.lambda_c**4 * p.density)
