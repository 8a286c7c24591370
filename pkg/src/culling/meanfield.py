"""Weak-coupling treatments: two-orbital variational states and Thomas-Fermi limits.

The variational state puts N-1 bosons in phi1 and one in phi2, with
phi_i(x) = sqrt(kappa_i) exp(-kappa_i |x|).  The orbitals are not orthogonal,
so the symmetrised product has norm N + N(N-1) s**2 with s = <phi1|phi2>, and
every matrix element picks up matching powers of s.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import minimize, minimize_scalar

from .model import ConfigError, ConvergenceError, WellSpec

KAPPA_MIN = 1e-4
# N g L above this counts as the Thomas-Fermi regime
TF_REGIME_FACTOR = 10.0


@dataclass(frozen=True)
class VariationalResult:
    kappa1: float
    kappa2: float
    energy: float
    single_orbital_kappa: float
    single_orbital_energy: float
    converged: bool
    delocalized: bool = False


@dataclass(frozen=True)
class OrbitalPair:
    grid: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    mu1: float
    mu2: float
    residual: float
    iterations: int
    residual_history: tuple = ()


# --- closed-form integrals for exponential orbitals ----------------------------

def _overlap(a, b):
    return 2.0 * math.sqrt(a * b) / (a + b)


def _one_body(a, b, well):
    """<phi_a| -d2/2 - V0 [|x| < L/2] |phi_b> for exponential orbitals."""
    s = _overlap(a, b)
    kinetic = 0.5 * a * b * s
    inside = s * -math.expm1(-(a + b) * well.L / 2)
    return kinetic - well.V0 * inside


def _quartic(*kappas):
    """Integral of the product of four exponential orbitals."""
    return math.sqrt(math.prod(kappas)) * 2.0 / sum(kappas)


def single_orbital_energy(kappa, N, g, well):
    """All N particles in one exponential orbital."""
    if not kappa > 0:
        raise ConfigError("kappa must be > 0")
    return N * _one_body(kappa, kappa, well) + g * N * (N - 1) / 2 * _quartic(kappa, kappa, kappa, kappa)


def two_orbital_energy(kappa1, kappa2, N, g, well):
    """<H> for the symmetrised state with N-1 particles in phi1 and one in phi2."""
    if not (kappa1 > 0 and kappa2 > 0):
        raise ConfigError("kappa values must be > 0")
    if N < 2:
        raise ConfigError("the two-orbital state needs N >= 2")
    s = _overlap(kappa1, kappa2)
    h11 = _one_body(kappa1, kappa1, well)
    h22 = _one_body(kappa2, kappa2, well)
    h12 = _one_body(kappa1, kappa2, well)
    A = _quartic(kappa1, kappa1, kappa1, kappa1)
    B = _quartic(kappa1, kappa1, kappa2, kappa2)
    C = _quartic(kappa1, kappa1, kappa1, kappa2)
    pairs = lambda n: n * (n - 1) / 2

    norm = N + N * (N - 1) * s * s
    one = N * (h22 + (N - 1) * h11) + N * (N - 1) * (2 * h12 * s + (N - 2) * h11 * s * s)
    two = (N * ((N - 1) * B + pairs(N - 1) * A)
           + N * (N - 1) * (B + 2 * (N - 2) * C * s + pairs(N - 2) * A * s * s))
    return (one + g * two) / norm


def permanent_energy(kappas, g, well):
    """<H> of the fully symmetrised product of the given exponential orbitals.

    Sums over permutations explicitly; only meant for small N as an
    independent check of the closed forms above.
    """
    n = len(kappas)
    S = np.array([[_overlap(a, b) for b in kappas] for a in kappas])
    H = np.array([[_one_body(a, b, well) for b in kappas] for a in kappas])
    norm = one = two = 0.0
    for perm in itertools.permutations(range(n)):
        factors = [S[i, perm[i]] for i in range(n)]
        norm += math.prod(factors)
        for i in range(n):
            rest = math.prod(factors[:i] + factors[i + 1:])
            one += H[i, perm[i]] * rest
        for i, j in itertools.combinations(range(n), 2):
            rest = math.prod(f for m, f in enumerate(factors) if m not in (i, j))
            two += _quartic(kappas[i], kappas[j], kappas[perm[i]], kappas[perm[j]]) * rest
    return (one + g * two) / norm


# --- minimisation ---------------------------------------------------------------

def _kappa_max(well):
    return 10.0 * math.sqrt(2.0 * max(well.V0, 1e-8))


def minimize_single_orbital(N, g, well):
    hi = _kappa_max(well)
    res = minimize_scalar(lambda k: single_orbital_energy(k, N, g, well),
                          bounds=(KAPPA_MIN, hi), method="bounded",
                          options={"xatol": 1e-10})
    return float(res.x), float(res.fun)


def minimize_two_orbital(N, g, well, start=None, maxiter=4000):
    """Minimise the two-orbital energy over (kappa1, kappa2).

    A nested bounded search (kappa2 inside kappa1) locates the basin and a
    Nelder-Mead pass polishes it.  kappa2 pinned at the lower edge means the
    second orbital has delocalised; it is reported as 0.
    """
    if N < 2:
        raise ConfigError("need N >= 2")
    lo, hi = KAPPA_MIN, _kappa_max(well)

    def inner(k1):
        r = minimize_scalar(lambda k2: two_orbital_energy(k1, k2, N, g, well),
                            bounds=(lo, hi), method="bounded", options={"xatol": 1e-9})
        return r.fun, r.x

    if start is None:
        r1 = minimize_scalar(lambda k1: inner(k1)[0], bounds=(lo, hi), method="bounded",
                             options={"xatol": 1e-9})
        start = (r1.x, inner(r1.x)[1])

    ks, es = minimize_single_orbital(N, g, well)
    if two_orbital_energy(ks, ks, N, g, well) < two_orbital_energy(*start, N, g, well):
        start = (ks, ks)

    def clipped(v):
        return two_orbital_energy(min(max(v[0], lo), hi), min(max(v[1], lo), hi), N, g, well)

    res = minimize(clipped, np.asarray(start, dtype=float), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": maxiter})
    if not res.success:
        raise ConvergenceError(f"NON_CONVERGED: two-orbital minimisation ({res.message})",
                               residual=float(res.fun))
    k1, k2 = (min(max(v, lo), hi) for v in res.x)
    energy = two_orbital_energy(k1, k2, N, g, well)
    if k2 < lo * 1.5 + 1e-12:
        k2_report, deloc = 0.0, True
    else:
        k2_report, deloc = float(k2), False
    return VariationalResult(kappa1=float(k1), kappa2=k2_report, energy=float(energy),
                             single_orbital_kappa=ks, single_orbital_energy=es,
                             converged=True, delocalized=deloc)


def variational_scan(N, g, V0_grid, L=1.0):
    """One VariationalResult per depth; each point is solved independently."""
    return [minimize_two_orbital(N, g, WellSpec(V0=float(V0), L=L)) for V0 in V0_grid]


def write_variational_csv(V0_grid, results, path):
    with open(path, "w", newline="") as fh:
        fh.write("# schema: variational v1\n")
        w = csv.writer(fh)
        w.writerow(["V0", "kappa1", "kappa2", "E_two", "kappa_single", "E_single", "delocalized"])
        for V0, r in zip(V0_grid, results):
            w.writerow([repr(float(V0)), repr(r.kappa1), repr(r.kappa2), repr(r.energy),
                        repr(r.single_orbital_kappa), repr(r.single_orbital_energy),
                        int(r.delocalized)])


# --- coupled orbital equations on a grid -------------------------------------

def make_grid(well, n_points=801):
    """Interior points of a uniform mesh over the box (walls excluded)."""
    x = np.linspace(-well.half_box, well.half_box, n_points + 2)[1:-1]
    return x


def _lowest(diag, off):
    diag = 0.5 * (diag + diag[::-1])
    w, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))
    vec = v[:, 0] * np.sign(v[:, 0].sum())
    vec = 0.5 * (vec + vec[::-1])
    return float(w[0]), vec / np.linalg.norm(vec)


def solve_coupled_orbitals(N, g, well, grid=None, mixing=0.3, tol=1e-8, maxiter=20000):
    """Self-consistent solution of the coupled two-orbital equations.

        (h + g(N-2)|phi1|^2 + 2g|phi2|^2) phi1 = mu1 phi1
        (h + 2(N-1)g|phi1|^2)            phi2 = mu2 phi2

    Each sweep diagonalises the two linearised operators exactly (lowest
    eigenvector of a tridiagonal finite-difference matrix) and mixes the new
    densities into the old ones with weight ``mixing``.  Orbitals are
    projected onto even parity every sweep: at strong coupling phi2 sits in
    two nearly degenerate pockets at the well edges and would otherwise pick
    up a symmetry-breaking admixture from rounding.  The residual is the
    largest of ||H_i phi_i - mu_i phi_i|| over both orbitals.
    """
    if N < 2:
        raise ConfigError("need N >= 2")
    x = make_grid(well) if grid is None else np.asarray(grid, dtype=float)
    dx = x[1] - x[0]
    kin_diag = np.full(x.size, 1.0 / dx**2)
    off = np.full(x.size - 1, -0.5 / dx**2)
    base = kin_diag + well.potential(x)
    c11, c12, c21 = g * (N - 2), 2.0 * g, 2.0 * g * (N - 1)

    _, phi = _lowest(base, off)
    phi = phi / math.sqrt(dx)
    rho1 = phi**2
    rho2 = phi**2
    history = []
    residual = math.inf
    for it in range(1, maxiter + 1):
        mu1, v1 = _lowest(base + c11 * rho1 + c12 * rho2, off)
        mu2, v2 = _lowest(base + c21 * rho1, off)
        phi1, phi2 = v1 / math.sqrt(dx), v2 / math.sqrt(dx)
        residual = max(
            _residual(phi1, base + c11 * phi1**2 + c12 * phi2**2, off, dx),
            _residual(phi2, base + c21 * phi1**2, off, dx),
        )
        history.append(residual)
        if residual <= tol:
            return OrbitalPair(grid=x, phi1=phi1, phi2=phi2, mu1=mu1, mu2=mu2,
                               residual=residual, iterations=it,
                               residual_history=tuple(history))
        rho1 = (1 - mixing) * rho1 + mixing * phi1**2
        rho2 = (1 - mixing) * rho2 + mixing * phi2**2
    raise ConvergenceError(f"NON_CONVERGED: coupled orbitals residual {residual:.3e}",
                           residual=residual)


def _residual(phi, diag, off, dx):
    hphi = diag * phi
    hphi[:-1] += off * phi[1:]
    hphi[1:] += off * phi[:-1]
    mu = float(np.sum(phi * hphi) * dx)
    return float(math.sqrt(np.sum((hphi - mu * phi) ** 2) * dx))


def second_orbital_release_depth(N, g, L=1.0, D=None, lo=None, hi=None, tol=1e-3, n_points=801):
    """Depth where mu2 of the coupled equations crosses the top of the well."""
    # much below 0.5x the threshold the N-1 core itself no longer fits
    lo = 0.7 * tf_threshold(N, g, L) if lo is None else lo
    hi = 1.5 * tf_threshold(N, g, L) + 5.0 if hi is None else hi

    def mu2(V0):
        well = WellSpec(V0=V0, L=L, D=D)
        return solve_coupled_orbitals(N, g, well, grid=make_grid(well, n_points)).mu2

    if mu2(lo) < 0 or mu2(hi) > 0:
        raise ConvergenceError("release depth not bracketed")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mu2(mid) < 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# --- Thomas-Fermi limits, gaps and rates ----------------------------------------

def tf_threshold(N, g, L=1.0):
    """Two-orbital Thomas-Fermi binding depth 2 g (N-1) / L."""
    return 2.0 * g * (N - 1) / L


def gp_single_orbital_threshold(N, g, L=1.0):
    """Depth g (N-1) / L where the single-orbital chemical potential reaches the top."""
    return g * (N - 1) / L


def in_tf_regime(N, g, L=1.0):
    return N * g * L >= TF_REGIME_FACTOR


def final_stage_gap_meanfield(N, g):
    """3 g N**2 / 2: energy to remove the last particle near the N+1 threshold."""
    return 1.5 * g * N * N


def depth_interval_meanfield(g, L=1.0):
    """Width 2 g / L of the depth window holding exactly N particles (N independent)."""
    return 2.0 * g / L


def max_rate_meanfield(N, g, L=1.0):
    return final_stage_gap_meanfield(N, g) * depth_interval_meanfield(g, L)
