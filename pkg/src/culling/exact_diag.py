"""Second-quantised N-boson Hamiltonian in the box-mode basis.

    H = sum_j E_j n_j + 1/2 sum U_{j1 j2 j3 j4} a+_{j1} a+_{j2} a_{j4} a_{j3}
    U_{j1 j2 j3 j4} = g * integral psi_j1 psi_j2 psi_j3 psi_j4

The two-body part is assembled through unordered mode pairs.  With
R[(r, Q), s] = m_Q <r| a_d a_c |s> (Q = {c, d}, m_Q = 2 for c != d, r an
(N-2)-particle state) one has H2 = 1/2 R^T (1 (x) U_pairs) R, which gives both a
cheap dense assembly and a matrix-free product for large bases.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh

from .model import ConfigError, ConvergenceError, CullingError, WellSpec
from .single_particle import box_quadrature, evaluate_wavefunction, solve_box_states

DIM_CAP = 200_000
DENSE_LIMIT = 5000
DEFAULT_MODES = 30
LOCALIZATION_THRESHOLD = 0.5
STABILITY_TOL = 5e-3
RESIDUAL_TOL = 1e-8


class BasisTooLarge(CullingError):
    pass


class FockBasis:
    """All occupations of N bosons over M modes, lexicographically descending.

    States are stored as sorted tuples of occupied mode indices (one entry per
    particle); ``occupations`` gives the occupation-number view.
    """

    def __init__(self, N, M, cap=DIM_CAP):
        if N < 0 or M < 1:
            raise ConfigError("need N >= 0 and M >= 1")
        dim = math.comb(N + M - 1, N)
        if dim > cap:
            raise BasisTooLarge(f"basis dimension {dim} exceeds cap {cap}; reduce M or N")
        self.N, self.M = N, M
        self.states = list(itertools.combinations_with_replacement(range(M), N))
        # combinations_with_replacement yields ascending mode tuples, which is
        # descending lexicographic order of the occupation vectors
        self.index = {s: i for i, s in enumerate(self.states)}

    def __len__(self):
        return len(self.states)

    @property
    def occupations(self):
        occ = np.zeros((len(self.states), self.M), dtype=np.int64)
        for i, s in enumerate(self.states):
            for j in s:
                occ[i, j] += 1
        return occ

    def lookup(self, occupation):
        modes = tuple(j for j, n in enumerate(occupation) for _ in range(n))
        return self.index[modes]


def build_basis(N, M, cap=DIM_CAP):
    return FockBasis(N, M, cap=cap)


@dataclass
class ManyBodySpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    basis_meta: dict
    localization: np.ndarray | None = None
    bound_flags: np.ndarray | None = None
    ambiguous: np.ndarray | None = None
    residuals: np.ndarray | None = field(default=None, repr=False)


# --- interaction elements ----------------------------------------------------

def _pairs(M):
    return [(a, b) for a in range(M) for b in range(a, M)]


def interaction_tensor(modes, g=1.0):
    """Full U[a, b, c, d] = g * integral of four modes (M**4 entries)."""
    x, w = _mode_quadrature(modes)
    phi = np.array([evaluate_wavefunction(m, x) for m in modes]) * w**0.25
    return g * np.einsum("aq,bq,cq,dq->abcd", phi, phi, phi, phi, optimize=True)


def _mode_quadrature(modes):
    kmax = max(max(m.k, m.kappa if m.extended else 0.0) for m in modes)
    return box_quadrature(modes[0].well, kmax)


def pair_interaction(modes, g):
    """U over unordered pairs: U[P, Q] = g * integral psi_a psi_b psi_c psi_d."""
    x, w = _mode_quadrature(modes)
    phi = np.array([evaluate_wavefunction(m, x) for m in modes])
    pairs = _pairs(len(modes))
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    prod = phi[a] * phi[b] * np.sqrt(w)
    U = g * (prod @ prod.T)
    # parity selection rule holds exactly, not just to quadrature accuracy
    par = np.array([m.parity == "odd" for m in modes])
    pp = par[a] ^ par[b]
    U[pp[:, None] ^ pp[None, :]] = 0.0
    return U


# --- Hamiltonian -------------------------------------------------------------

@dataclass
class Hamiltonian:
    """Diagonal one-body part plus the pair-factorised interaction.

    ``matrix`` is a dense array for small bases; otherwise ``operator`` is a
    LinearOperator that never forms the matrix.
    """

    basis: FockBasis
    diag: np.ndarray
    R: sp.csr_matrix | None
    U: np.ndarray | None
    n_rest: int
    matrix: np.ndarray | None = None

    @property
    def dim(self):
        return len(self.basis)

    def matvec(self, v):
        out = self.diag * v
        if self.R is not None:
            Y = (self.R @ v).reshape(self.n_rest, -1)
            out = out + 0.5 * (self.R.T @ (Y @ self.U).ravel())
        return out

    @property
    def operator(self):
        return LinearOperator((self.dim, self.dim), matvec=self.matvec,
                              rmatvec=self.matvec, dtype=float)

    def todense(self):
        if self.matrix is None:
            self.matrix = _dense(self)
        return self.matrix


def _pair_annihilation(basis):
    """Sparse R with rows (r, Q) and columns s, plus the (N-2)-particle basis."""
    N, M = basis.N, basis.M
    rest = FockBasis(N - 2, M, cap=math.inf)
    pair_index = {p: i for i, p in enumerate(_pairs(M))}
    n_pairs = len(pair_index)
    rows, cols, vals = [], [], []
    for s_idx, s in enumerate(basis.states):
        counts = {}
        for j in s:
            counts[j] = counts.get(j, 0) + 1
        occ = sorted(counts)
        for ci, c in enumerate(occ):
            for d in occ[ci:]:
                if c == d:
                    if counts[c] < 2:
                        continue
                    amp = math.sqrt(counts[c] * (counts[c] - 1))
                    mult = 1.0
                else:
                    amp = math.sqrt(counts[c] * counts[d])
                    mult = 2.0
                r = list(s)
                r.remove(c)
                r.remove(d)
                rows.append(rest.index[tuple(r)] * n_pairs + pair_index[(c, d)])
                cols.append(s_idx)
                vals.append(mult * amp)
    R = sp.csr_matrix((vals, (rows, cols)), shape=(len(rest) * n_pairs, len(basis)))
    return R, len(rest)


def build_hamiltonian(basis, modes, g, dense_limit=DENSE_LIMIT):
    if len(modes) != basis.M:
        raise ConfigError(f"basis has {basis.M} modes but {len(modes)} orbitals were given")
    energies = np.array([m.energy for m in modes])
    diag = np.zeros(len(basis))
    for i, s in enumerate(basis.states):
        for j in s:
            diag[i] += energies[j]
    if basis.N < 2 or g == 0:
        H = Hamiltonian(basis, diag, None, None, 0)
    else:
        R, n_rest = _pair_annihilation(basis)
        H = Hamiltonian(basis, diag, R, pair_interaction(modes, g), n_rest)
    if len(basis) <= dense_limit:
        H.matrix = _dense(H)
    return H


def _dense(H):
    mat = np.diag(H.diag)
    if H.R is None:
        return mat
    coo = H.R.tocoo()
    n_pairs = H.U.shape[0]
    r_of = coo.row // n_pairs
    q_of = coo.row % n_pairs
    order = np.argsort(r_of, kind="stable")
    r_sorted = r_of[order]
    bounds = np.searchsorted(r_sorted, np.arange(H.n_rest + 1))
    for r in range(H.n_rest):
        sl = order[bounds[r]:bounds[r + 1]]
        s, q, v = coo.col[sl], q_of[sl], coo.data[sl]
        mat[np.ix_(s, s)] += 0.5 * np.outer(v, v) * H.U[np.ix_(q, q)]
    return mat


# --- diagonalisation -----------------------------------------------------------

def diagonalize(H, k=6, tol=RESIDUAL_TOL):
    """The k lowest eigenpairs of a symmetric matrix, Hamiltonian or operator."""
    if isinstance(H, Hamiltonian):
        meta = {"N": H.basis.N, "M": H.basis.M}
        dense = H.matrix
        op = H.operator
        dim = H.dim
    elif isinstance(H, LinearOperator):
        meta, dense, op, dim = {}, None, H, H.shape[0]
    else:
        dense = np.asarray(H, dtype=float)
        if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
            raise ConfigError("matrix must be square")
        if not np.allclose(dense, dense.T, atol=1e-12, rtol=0):
            raise ConfigError("matrix is not symmetric")
        meta, op, dim = {}, None, dense.shape[0]
    k = min(k, dim)

    if dense is not None and not np.any(dense - np.diag(np.diagonal(dense))):
        d = np.diagonal(dense)
        order = np.argsort(d, kind="stable")[:k]
        vecs = np.zeros((dim, k))
        vecs[order, np.arange(k)] = 1.0
        return ManyBodySpectrum(d[order].copy(), vecs, meta, residuals=np.zeros(k))

    if dense is not None and (dim <= 1500 or k > dim // 4):
        w, v = scipy.linalg.eigh(dense, subset_by_index=[0, k - 1])
    else:
        # the factorised operator streams far less memory than a large dense matvec
        w, v = _lanczos(op if op is not None else dense, k, dim)
    matvec = (lambda x: dense @ x) if dense is not None else op.matvec
    res = np.array([np.linalg.norm(matvec(v[:, i]) - w[i] * v[:, i]) for i in range(k)])
    if np.any(res > tol):
        raise ConvergenceError(f"eigensolver residual {res.max():.3e} above {tol:.1e}",
                               residual=float(res.max()))
    return ManyBodySpectrum(w, v, meta, residuals=res)


def _lanczos(target, k, dim):
    ncv = min(dim, max(2 * k + 1, 40))
    v0 = np.ones(dim) / math.sqrt(dim)
    w, v = eigsh(target, k=k, which="SA", tol=1e-13, ncv=ncv, v0=v0, maxiter=20 * dim)
    order = np.argsort(w)
    return w[order], v[:, order]


# --- boundness -----------------------------------------------------------------

def _annihilation(basis):
    """Sparse map with rows (r, b) for r in the (N-1) basis: value sqrt(n_b)."""
    M = basis.M
    rest = FockBasis(basis.N - 1, M, cap=math.inf)
    rows, cols, vals = [], [], []
    for s_idx, s in enumerate(basis.states):
        for b in set(s):
            r = list(s)
            r.remove(b)
            rows.append(rest.index[tuple(r)] * M + b)
            cols.append(s_idx)
            vals.append(math.sqrt(s.count(b)))
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(rest) * M, len(basis)))


def one_body_density(basis, vec):
    A = _annihilation(basis)
    Y = (A @ vec).reshape(-1, basis.M)
    return Y.T @ Y


def localization(spectrum, basis, modes):
    """Fraction of each level's one-body density inside the well."""
    well = modes[0].well
    x, w = box_quadrature(well, max(m.k for m in modes))
    inside = np.abs(x) <= well.half_width
    phi = np.array([evaluate_wavefunction(m, x[inside]) for m in modes])
    W = (phi * w[inside]) @ phi.T
    A = _annihilation(basis)
    out = []
    for i in range(spectrum.eigenvectors.shape[1]):
        Y = (A @ spectrum.eigenvectors[:, i]).reshape(-1, basis.M)
        rho = Y.T @ Y
        out.append(float(np.sum(rho * W)) / basis.N)
    return np.clip(np.array(out), 0.0, 1.0)


def solve_many_body(N, g, well, M=DEFAULT_MODES, k=6, localize=False):
    """Box modes, basis, Hamiltonian and the k lowest levels in one call."""
    modes = solve_box_states(well, M)
    basis = build_basis(N, M)
    H = build_hamiltonian(basis, modes, g)
    sol = diagonalize(H, k)
    sol.basis_meta.update({"M": M, "D": well.D, "N": N, "g": g, "V0": well.V0, "L": well.L})
    if localize:
        sol.localization = localization(sol, basis, modes)
    return sol


def classify_bound(spectrum, well, resolve=None, theta=LOCALIZATION_THRESHOLD,
                   stability_tol=STABILITY_TOL, box_factor=1.25):
    """Flag levels that are genuinely bound rather than discretised continuum.

    A level is bound when its energy is below the top of the well, more than
    ``theta`` of its density sits inside the well, and (if ``resolve`` is
    given) a level within ``stability_tol`` survives when the box is enlarged
    by ``box_factor``.  ``resolve(D)`` must return the eigenvalues at box size
    D.  Levels passing energy and localisation but failing stability are
    also marked ``ambiguous`` when the shift is within 3x the tolerance.
    """
    E = np.asarray(spectrum.eigenvalues)
    loc = spectrum.localization
    if loc is None:
        raise ConfigError("spectrum has no localisation data; solve with localize=True")
    flags = (E < 0) & (loc > theta)
    ambiguous = np.zeros_like(flags)
    if resolve is not None and np.any(flags):
        other = np.asarray(resolve(box_factor * well.D))
        shift = np.array([np.min(np.abs(other - e)) for e in E])
        ambiguous = flags & (shift >= stability_tol) & (shift < 3 * stability_tol)
        flags = flags & (shift < stability_tol)
    spectrum.bound_flags = flags
    spectrum.ambiguous = ambiguous
    return spectrum


def bound_levels(N, g, well, M=DEFAULT_MODES, k=6, **kw):
    """Solve and classify in one step (box stability included)."""
    sol = solve_many_body(N, g, well, M=M, k=k, localize=True)
    resolve = lambda D: solve_many_body(N, g, well.with_box(D), M=M, k=k).eigenvalues
    return classify_bound(sol, well, resolve=resolve, **kw)


# --- thresholds ------------------------------------------------------------------

def ground_energy(N, g, well, M=DEFAULT_MODES):
    if N == 0:
        return 0.0
    return float(solve_many_body(N, g, well, M=M, k=1).eigenvalues[0])


def _fit_inverse_k(kc, E):
    A = np.vstack([np.ones(len(kc)), 1 / kc, 1 / kc**2]).T
    return np.linalg.lstsq(A, E, rcond=None)[0][0]


def extrapolated_ground_energy(N, g, well, Ms=None, pair_Ms=(50, 60, 80, 100, 120)):
    """Ground energy extrapolated to an infinite mode set, with an error estimate.

    With a contact interaction the truncation error falls off like 1/k_c, k_c
    the wavenumber of the highest kept mode, and comes from the pair cusp.
    For N = 2 a fit E(M) = E_inf + a/k_c + b/k_c^2 over ``pair_Ms`` is used.
    For N > 2 the error is taken to have the same M dependence as the pair
    problem, E_N(M) = E_inf + c (E_2(M) - E_2(inf)), which is far more stable
    than a free fit at the mode counts an N-body basis can afford.  The error
    is the shift when the smallest M is dropped plus c times the pair error.
    Returns (E_inf, error, {M: E(M)}).
    """
    if N < 2 or g == 0:
        e = ground_energy(N, g, well, max(Ms or pair_Ms))
        return e, 0.0, {}
    pair_Ms = sorted(pair_Ms)
    if len(pair_Ms) < 4:
        raise ConfigError("need at least four mode counts to extrapolate")
    kc = {M: solve_box_states(well, M)[-1].k for M in set(pair_Ms) | set(Ms or ())}
    E2 = {M: ground_energy(2, g, well, M) for M in pair_Ms}
    fit2 = lambda ms: _fit_inverse_k(np.array([kc[m] for m in ms]), np.array([E2[m] for m in ms]))
    e2 = fit2(pair_Ms)
    err2 = abs(fit2(pair_Ms[1:]) - e2)
    if N == 2:
        return float(e2), float(max(err2, 1e-12)), E2
    Ms = sorted(Ms or (50, 60, 70, 80))
    if len(Ms) < 3:
        raise ConfigError("need at least three mode counts to extrapolate")
    for M in Ms:
        if M not in E2:
            E2[M] = ground_energy(2, g, well, M)
    EN = {M: ground_energy(N, g, well, M) for M in Ms}

    def fit(ms):
        A = np.vstack([np.ones(len(ms)), [E2[m] - e2 for m in ms]]).T
        return np.linalg.lstsq(A, [EN[m] for m in ms], rcond=None)[0]

    e_inf, c = fit(Ms)
    err = abs(fit(Ms[1:])[0] - e_inf) + abs(c) * err2
    return float(e_inf), float(max(err, 1e-12)), EN


def binding_gap(N, g, well, M=DEFAULT_MODES):
    """E_N - E_{N-1} of the box ground states; negative while N stay bound."""
    return ground_energy(N, g, well, M) - ground_energy(N - 1, g, well, M)


@dataclass(frozen=True)
class ThresholdPoint:
    g: float
    V0: float
    N: int
    method: str
    error: float
    detail: dict = field(default_factory=dict, compare=False)


def _bisect_threshold(N, g, lo, hi, L, D, M, tol):
    gap = lambda V0: binding_gap(N, g, WellSpec(V0=V0, L=L, D=D), M)
    if gap(hi) >= 0 or gap(lo) < 0:
        raise ConvergenceError(f"threshold for N={N}, g={g} not bracketed by [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def threshold_scan_diag(N, g, V0_range, L=1.0, D=None, M=DEFAULT_MODES, tol=1e-3,
                        extra_modes=10):
    """Smallest depth whose N-particle box ground state lies below the (N-1) one.

    The depth is bisected with M and M + ``extra_modes`` modes.  The cusp
    makes the truncation error fall off like 1/k_c, so the two depths are
    extrapolated linearly in 1/k_c to an infinite mode set; the shift between
    them is the error bar.
    """
    lo, hi = V0_range
    D = 10.0 * L if D is None else D
    M2 = M + extra_modes
    v_m = _bisect_threshold(N, g, lo, hi, L, D, M, tol)
    v_m2 = _bisect_threshold(N, g, lo, hi, L, D, M2, tol)
    modes = solve_box_states(WellSpec(V0=v_m2, L=L, D=D), M2)
    k1, k2 = 1.0 / modes[M - 1].k, 1.0 / modes[M2 - 1].k
    v_inf = v_m2 - (v_m - v_m2) * k2 / (k1 - k2)
    err = max(abs(v_m - v_m2), tol)
    return ThresholdPoint(g=g, V0=float(v_inf), N=N, method="diag", error=err,
                          detail={"M": M, "V0_M": v_m, "V0_M_plus": v_m2, "D": D})


# --- output ----------------------------------------------------------------------

def level_rows(V0_grid, N_values, g, L=1.0, D=None, M=DEFAULT_MODES, k=6, stability=True):
    """Rows (V0, N, level, energy, bound) over a depth sweep."""
    rows = []
    for V0 in V0_grid:
        well = WellSpec(V0=float(V0), L=L, D=D)
        for N in N_values:
            if stability:
                spec = bound_levels(N, g, well, M=M, k=k)
            else:
                spec = solve_many_body(N, g, well, M=M, k=k, localize=True)
                classify_bound(spec, well)
            for i, e in enumerate(spec.eigenvalues):
                rows.append((float(V0), N, i, float(e), bool(spec.bound_flags[i])))
    return rows


def write_levels_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write("# schema: diag-levels v1\n")
        w = csv.writer(fh)
        w.writerow(["V0", "N", "level_index", "energy", "bound"])
        for V0, N, i, e, b in rows:
            w.writerow([repr(V0), N, i, repr(e), int(b)])


def save_interaction_cache(modes, g, path):
    """JSON table of pair interaction elements keyed by (V0, D, M)."""
    well = modes[0].well
    U = pair_interaction(modes, g)
    record = {"key": {"V0": well.V0, "D": well.D, "M": len(modes), "L": well.L, "g": g},
              "pairs": _pairs(len(modes)), "U": U.tolist()}
    with open(path, "w") as fh:
        json.dump(record, fh)


def load_interaction_cache(path, well, M, g):
    with open(path) as fh:
        record = json.load(fh)
    key = record["key"]
    if (key["V0"], key["D"], key["M"], key["L"], key["g"]) != (well.V0, well.D, M, well.L, g):
        return None
    return np.array(record["U"])
