"""Diffusion Monte Carlo for N contact-interacting bosons in the boxed well.

Importance sampling uses

    Psi_T = [sum_i phi2(x_i)/phi1(x_i)] * prod_i phi1(x_i) * prod_{i<j} f2(|x_i - x_j|)

where phi1, phi2 are box ground states of wells of depth V0 and ``outer_depth``
(equal by default, which reduces to a plain product) and f2 is the two-body
Jastrow factor cos(k (r - R)) for r < R, 1 beyond.  f2 carries the contact
cusp f2'(0+)/f2(0) = g/2, so the delta interaction never has to be sampled.

Moves are drift-diffusion proposals with a Metropolis accept/reject step;
walkers branch with integerised weights and the reference energy is steered
back towards the target population.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .model import ConfigError, ConvergenceError, CullingError, WellSpec
from .single_particle import evaluate_wavefunction, solve_box_states


class PopulationError(CullingError):
    """POPULATION_COLLAPSE or POPULATION_EXPLOSION."""

    def __init__(self, kind, history):
        self.kind = kind
        self.history = history
        super().__init__(f"{kind}: population {history[-1]} (target history tail {history[-5:]})")


@dataclass(frozen=True)
class DmcConfig:
    walkers: int = 1000
    time_step: float = 1e-3
    blocks: int = 50
    steps_per_block: int = 2000
    seed: int = 12345
    equil_blocks: int = 5
    jastrow_cutoff: float | None = None
    outer_depth: float | None = None
    feedback_steps: float = 100.0
    drift_limit: float = 0.5
    reference_shift: float = 0.0

    def __post_init__(self):
        if self.walkers < 100:
            raise ConfigError("need at least 100 walkers")
        if not self.time_step > 0:
            raise ConfigError("time_step must be > 0")
        if self.blocks < 10:
            raise ConfigError("need at least 10 blocks")
        if self.steps_per_block < 1 or self.equil_blocks < 0:
            raise ConfigError("bad block layout")
        if not self.feedback_steps > 0 or not 0 < self.drift_limit:
            raise ConfigError("feedback_steps and drift_limit must be > 0")


@dataclass
class DmcResult:
    energy: float
    stderr: float
    acceptance: float
    population_history: np.ndarray
    block_energies: np.ndarray
    config: DmcConfig
    N: int
    g: float
    well: WellSpec
    timestep_bias_estimate: float | None = None
    extrapolated_energy: float | None = None
    extrapolated_stderr: float | None = None
    coarse: "DmcResult | None" = field(default=None, repr=False)

    def digest(self):
        h = hashlib.sha256()
        h.update(np.asarray(self.block_energies, dtype=np.float64).tobytes())
        h.update(np.asarray(self.population_history, dtype=np.int64).tobytes())
        return h.hexdigest()

    def to_record(self):
        return {
            "N": self.N, "g": self.g,
            "well": {"V0": self.well.V0, "L": self.well.L, "D": self.well.D},
            "config": asdict(self.config),
            "energy": self.energy, "stderr": self.stderr,
            "acceptance": self.acceptance,
            "timestep_bias_estimate": self.timestep_bias_estimate,
            "extrapolated_energy": self.extrapolated_energy,
            "extrapolated_stderr": self.extrapolated_stderr,
            "history_digest": self.digest(),
            "population_min": int(np.min(self.population_history)),
            "population_max": int(np.max(self.population_history)),
        }


# --- trial wavefunction --------------------------------------------------------

class _Orbital:
    """Box ground state as log value, log-derivative and curvature phi''/phi."""

    def __init__(self, well):
        st = solve_box_states(well, 1)[0]
        self.state = st
        self.well = well
        self.energy = st.energy
        b = well.half_box - well.half_width
        self.log_in = math.log(abs(st.amp_in))
        if st.extended:
            self.q, self.p = 0.0, st.kappa
            self.log_out = math.log(abs(st.amp_out))
        else:
            self.q, self.p = st.kappa, 0.0
            self.log_out = math.log(abs(st.amp_out)) - self.q * b
        self.k = st.k

    def evaluate(self, x):
        well = self.well
        ax = np.abs(x)
        inside = ax <= well.half_width
        sgn = np.where(x < 0, -1.0, 1.0)
        kx = self.k * np.minimum(ax, well.half_width)
        log_in = self.log_in + np.log(np.cos(kx))
        a_in = -self.k * np.tan(kx) * sgn
        y = np.maximum(well.half_box - np.maximum(ax, well.half_width), 1e-300)
        if self.q > 0:
            qy = self.q * y
            log_out = self.log_out + qy + np.log(-np.expm1(-2 * qy)) - math.log(2 * self.q)
            a_out = -sgn * self.q / np.tanh(qy)
        elif self.p > 0:
            py = self.p * y
            log_out = self.log_out + np.log(np.sin(py) / self.p)
            a_out = -sgn * self.p / np.tan(py)
        else:
            log_out = self.log_out + np.log(y)
            a_out = -sgn / y
        logv = np.where(inside, log_in, log_out)
        a = np.where(inside, a_in, a_out)
        # phi''/phi from the eigen-equation, exact on both sides of the edge
        curv = -2.0 * self.energy - np.where(inside, 2.0 * well.V0, 0.0)
        return logv, a, curv


def jastrow_wavenumber(g, R):
    """k in [0, pi/(2R)) with k tan(k R) = g / 2."""
    if g == 0:
        return 0.0
    f = lambda k: k * math.tan(k * R) - 0.5 * g
    hi = math.pi / (2 * R) * (1 - 1e-15)
    return brentq(f, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


@dataclass
class TrialWavefunction:
    N: int
    g: float
    well: WellSpec
    cutoff: float | None = None
    outer_depth: float | None = None
    phi1: _Orbital = field(init=False, repr=False)
    phi2: _Orbital | None = field(init=False, repr=False)

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError("need N >= 1")
        if self.g < 0:
            raise ConfigError("only repulsive g is supported")
        self.cutoff = self.well.half_width if self.cutoff is None else self.cutoff
        if not self.cutoff > 0:
            raise ConfigError("Jastrow cutoff must be > 0")
        self.k = jastrow_wavenumber(self.g, self.cutoff)
        self.phi1 = _Orbital(self.well)
        self.phi2 = None
        if self.outer_depth is not None and self.outer_depth != self.well.V0 and self.N > 1:
            if self.outer_depth < 0:
                raise ConfigError("outer_depth must be >= 0")
            self.phi2 = _Orbital(self.well.with_depth(self.outer_depth))

    def jastrow(self, r):
        """u = log f2 and its first two derivatives for r >= 0."""
        if self.k == 0:
            z = np.zeros_like(r)
            return z, z, z
        arg = self.k * (np.minimum(r, self.cutoff) - self.cutoff)
        t = np.tan(arg)
        # arg = 0 beyond the cutoff, so u and du vanish there on their own
        u = np.log(np.cos(arg))
        du = -self.k * t
        d2u = np.where(r < self.cutoff, -self.k**2 * (1 + t * t), 0.0)
        return u, du, d2u

    def evaluate(self, X):
        """log Psi_T, drift grad log Psi_T and local energy for walkers X (W, N)."""
        X = np.atleast_2d(X)
        l1, a1, c1 = self.phi1.evaluate(X)
        logpsi = np.sum(l1, axis=1)
        grad = a1.copy()
        lap = c1 - a1 * a1
        if self.phi2 is not None:
            l2, a2, c2 = self.phi2.evaluate(X)
            shift = np.max(l2 - l1, axis=1, keepdims=True)
            rho = np.exp(l2 - l1 - shift)
            drho = rho * (a2 - a1)
            d2rho = rho * ((a2 - a1) ** 2 + (c2 - a2 * a2) - (c1 - a1 * a1))
            S = np.sum(rho, axis=1, keepdims=True)
            logpsi = logpsi + np.log(S[:, 0]) + shift[:, 0]
            grad = grad + drho / S
            lap = lap + d2rho / S - (drho / S) ** 2
        if self.k > 0:
            for i in range(self.N):
                for j in range(i + 1, self.N):
                    d = X[:, i] - X[:, j]
                    u, du, d2u = self.jastrow(np.abs(d))
                    du = du * np.sign(d)
                    logpsi = logpsi + u
                    grad[:, i] += du
                    grad[:, j] -= du
                    lap[:, i] += d2u
                    lap[:, j] += d2u
        potential = -self.well.V0 * np.count_nonzero(np.abs(X) <= self.well.half_width, axis=1)
        local = -0.5 * np.sum(lap + grad * grad, axis=1) + potential
        return logpsi, grad, local


def trial_wavefunction(x, N, g, well, cutoff=None, outer_depth=None):
    """(log amplitude, drift, local energy) of one configuration of N positions."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != N:
        raise ConfigError(f"expected {N} positions")
    if np.any(np.abs(x) >= well.half_box):
        raise ConfigError("positions must lie inside the box")
    tw = TrialWavefunction(N, g, well, cutoff=cutoff, outer_depth=outer_depth)
    logpsi, grad, local = tw.evaluate(x)
    return float(logpsi[0]), grad[0], float(local[0])


def default_outer_depth(N, g, well):
    """Depth of the well felt by the last particle in a Hartree picture.

    The N-1 particles in phi1 raise the floor by 2 g (N-1) <|phi1|^2>.
    """
    if N < 2 or g == 0:
        return well.V0
    phi = solve_box_states(well, 1)[0]
    x = np.linspace(-well.half_box, well.half_box, 4001)
    dens = evaluate_wavefunction(phi, x) ** 2
    mean_density = np.trapezoid(dens * dens, x)
    return float(np.clip(well.V0 - 2.0 * g * (N - 1) * mean_density, 0.0, well.V0))


# --- the walk ----------------------------------------------------------------

def _initial_walkers(orbital, n_walkers, N, rng, well):
    x = np.linspace(-well.half_box, well.half_box, 20001)[1:-1]
    p = evaluate_wavefunction(orbital.state, x) ** 2
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    u = rng.random((n_walkers, N))
    X = np.interp(u, cdf, x)
    return np.clip(X, -well.half_box * (1 - 1e-9), well.half_box * (1 - 1e-9))


def _limit_drift(G, tau, a):
    g2 = G * G * tau * a
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(g2 > 1e-12, (np.sqrt(1 + 2 * g2) - 1) / np.where(g2 > 1e-12, g2, 1), 1.0)
    return G * scale


def run_dmc(N, g, well, config=None, trial=None):
    """Mixed-estimator ground-state energy with blocked error bars."""
    cfg = config or DmcConfig()
    outer = cfg.outer_depth
    if trial is None:
        trial = TrialWavefunction(N, g, well, cutoff=cfg.jastrow_cutoff, outer_depth=outer)
    rng = np.random.default_rng(cfg.seed)
    tau = cfg.time_step
    sq = math.sqrt(tau)
    half_box = well.half_box
    target = cfg.walkers

    X = _initial_walkers(trial.phi1, target, N, rng, well)
    logpsi, G, EL = trial.evaluate(X)
    Gl = _limit_drift(G, tau, cfg.drift_limit)
    e_est = float(np.mean(EL))
    e_ref = e_est + cfg.reference_shift
    feedback = 1.0 / (cfg.feedback_steps * tau)

    total_blocks = cfg.blocks + cfg.equil_blocks
    block_E = []
    pop_hist = []
    accepted = proposed = 0
    for block in range(total_blocks):
        acc_w = acc_we = 0.0
        for _ in range(cfg.steps_per_block):
            npop = X.shape[0]
            Xn = X + tau * Gl + sq * rng.standard_normal(X.shape)
            inside = np.all(np.abs(Xn) < half_box, axis=1)
            Xs = np.where(inside[:, None], Xn, X)
            lpn, Gn, ELn = trial.evaluate(Xs)
            Gln = _limit_drift(Gn, tau, cfg.drift_limit)
            fwd = np.sum((Xs - X - tau * Gl) ** 2, axis=1)
            bwd = np.sum((X - Xs - tau * Gln) ** 2, axis=1)
            log_ratio = 2 * (lpn - logpsi) - (bwd - fwd) / (2 * tau)
            acc = inside & (np.log(rng.random(npop)) < np.minimum(log_ratio, 0.0))
            accepted += int(acc.sum())
            proposed += npop
            EL_new = np.where(acc, ELn, EL)
            weight = np.exp(-tau * (0.5 * (EL + EL_new) - e_ref))
            X = np.where(acc[:, None], Xs, X)
            logpsi = np.where(acc, lpn, logpsi)
            Gl = np.where(acc[:, None], Gln, Gl)
            EL = EL_new

            wsum = weight.sum()
            e_step = float(np.dot(weight, EL) / wsum)
            acc_w += wsum / npop
            acc_we += e_step * wsum / npop

            copies = np.floor(weight + rng.random(npop)).astype(np.int64)
            X = np.repeat(X, copies, axis=0)
            logpsi = np.repeat(logpsi, copies)
            Gl = np.repeat(Gl, copies, axis=0)
            EL = np.repeat(EL, copies)
            npop = X.shape[0]
            pop_hist.append(npop)
            if npop < 0.25 * target or npop == 0:
                raise PopulationError("POPULATION_COLLAPSE", pop_hist)
            if npop > 4 * target:
                raise PopulationError("POPULATION_EXPLOSION", pop_hist)
            e_est = 0.99 * e_est + 0.01 * e_step
            e_ref = e_est + cfg.reference_shift + feedback * math.log(target / npop)
        if block >= cfg.equil_blocks:
            block_E.append(acc_we / acc_w)

    block_E = np.array(block_E)
    energy = float(np.mean(block_E))
    stderr = float(np.std(block_E, ddof=1) / math.sqrt(len(block_E)))
    # a zero-variance trial still carries round-off in the local energy
    stderr = max(stderr, 64 * np.finfo(float).eps * max(1.0, abs(energy)))
    return DmcResult(energy=energy, stderr=stderr, acceptance=accepted / max(proposed, 1),
                     population_history=np.array(pop_hist), block_energies=block_E,
                     config=cfg, N=N, g=g, well=well)


def run_dmc_extrapolated(N, g, well, config=None):
    """Main run at tau plus a check run at 2 tau, extrapolated linearly to zero.

    Returns the main run with ``timestep_bias_estimate`` = E(tau) - E(0) and
    the extrapolated energy and its error filled in.
    """
    cfg = config or DmcConfig()
    main = run_dmc(N, g, well, cfg)
    coarse = run_dmc(N, g, well, replace(cfg, time_step=2 * cfg.time_step))
    e0 = 2 * main.energy - coarse.energy
    main.timestep_bias_estimate = main.energy - e0
    main.extrapolated_energy = e0
    main.extrapolated_stderr = math.sqrt(4 * main.stderr**2 + coarse.stderr**2)
    main.coarse = coarse
    return main


# --- thresholds ------------------------------------------------------------------

@dataclass(frozen=True)
class DmcThreshold:
    g: float
    V0: float
    N: int
    error: float
    stat_error: float
    extrapolation_error: float
    samples: tuple
    method: str = "dmc"


def unbinding_threshold_dmc(N, g, V0_grid, L=1.0, D=None, config=None, fit_points=3,
                            outer_depth="auto", energy=None):
    """Extrapolated depth where E_N - E_{N-1} reaches zero.

    ``V0_grid`` is walked from the deepest value down while the N-particle
    ground state stays below the (N-1)-particle one.  A weighted straight line
    through the last ``fit_points`` bound depths plus the first unbound one
    (if any) gives the threshold; the spread to a quadratic fit is reported
    as the extrapolation error and added in quadrature to the statistical one.
    ``energy(N, well)`` may override the DMC energy evaluation (mean, error).
    """
    if N < 2:
        raise ConfigError("threshold extrapolation needs N >= 2")
    cfg = config or DmcConfig()
    grid = sorted((float(v) for v in V0_grid), reverse=True)

    def dmc_energy(n, well):
        if energy is not None:
            return energy(n, well)
        depth = default_outer_depth(n, g, well) if outer_depth == "auto" else outer_depth
        res = run_dmc(n, g, well, replace(cfg, outer_depth=depth))
        return res.energy, res.stderr

    samples = []
    for V0 in grid:
        well = WellSpec(V0=V0, L=L, D=D)
        eN, sN = dmc_energy(N, well)
        eM, sM = dmc_energy(N - 1, well)
        dE, sd = eN - eM, math.hypot(sN, sM)
        samples.append((V0, dE, sd))
        if dE >= 0:
            break
    bound = [s for s in samples if s[1] < 0]
    if not bound or len(samples) < 2:
        raise ConvergenceError("NO_BRACKET: E_N - E_{N-1} never negative on the grid"
                               if not bound else "NO_BRACKET: need at least two depths")
    tail = bound[-fit_points:] + [s for s in samples if s[1] >= 0]
    v = np.array([s[0] for s in tail])
    y = np.array([s[1] for s in tail])
    sig = np.array([max(s[2], 1e-12) for s in tail])
    root, stat = _linear_root(v, y, sig)
    extrap = 0.0
    if len(tail) >= 3:
        quad = _quadratic_root(v, y, sig, root)
        if quad is not None:
            extrap = abs(quad - root)
    return DmcThreshold(g=g, V0=root, N=N, error=math.hypot(stat, extrap), stat_error=stat,
                        extrapolation_error=extrap, samples=tuple(samples))


def _linear_root(v, y, sig):
    w = 1.0 / sig**2
    A = np.vstack([np.ones_like(v), v]).T
    cov = np.linalg.inv(A.T @ (A * w[:, None]))
    a, b = cov @ (A.T @ (w * y))
    root = -a / b
    # delta method: d root / d(a, b) = (-1/b, a/b^2)
    J = np.array([-1.0 / b, a / b**2])
    return float(root), float(math.sqrt(max(J @ cov @ J, 0.0)))


def _quadratic_root(v, y, sig, near):
    c2, c1, c0 = np.polyfit(v, y, 2, w=1.0 / sig)
    roots = np.roots([c2, c1, c0])
    roots = roots[np.isreal(roots)].real
    if roots.size == 0:
        return None
    return float(roots[np.argmin(np.abs(roots - near))])


def write_result_json(result, path):
    with open(path, "w") as fh:
        json.dump(result.to_record(), fh, indent=2, sort_keys=True)


def write_threshold_csv(points, path):
    with open(path, "w", newline="") as fh:
        fh.write("# schema: dmc-thresholds v1\n")
        w = csv.writer(fh)
        w.writerow(["g", "N", "V0_threshold", "error", "stat_error", "extrapolation_error"])
        for p in points:
            w.writerow([repr(p.g), p.N, repr(p.V0), repr(p.error), repr(p.stat_error),
                        repr(p.extrapolation_error)])
