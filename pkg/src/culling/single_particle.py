"""One particle in a finite square well.

Two families of states are produced:

* ``solve_bound_states`` -- true bound states on the infinite line;
* ``solve_box_states``  -- the well embedded in a hard-wall box of size D,
  giving a discrete set of bound-like and extended modes that serves as the
  many-body basis.

Inside the well the even (odd) states are ``cos(kx)`` (``sin(kx)``).  Outside,
bound states decay with ``q = sqrt(2 V0 - k**2)`` and extended box modes
oscillate with ``p = sqrt(k**2 - 2 V0)``; both cases are handled in real
arithmetic.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from .model import ConfigError, CullingError, WellSpec

_ROOT_XTOL = 1e-14
_BIG_EXPONENT = 300.0


class RootBracketError(CullingError):
    """Raised when the matching-condition roots could not all be bracketed."""

    def __init__(self, message, interval):
        self.interval = interval
        super().__init__(f"{message} (k interval {interval[0]:.6g}..{interval[1]:.6g})")


@dataclass(frozen=True)
class SingleParticleState:
    """A piecewise-analytic orbital.

    ``amp_in`` multiplies ``cos(kx)`` or ``sin(kx)/k`` inside the well and
    ``amp_out`` multiplies the outside solution (see ``_sigma``).  ``kappa``
    is the decay constant q for ``E < 0`` and the outside wavenumber p for
    extended modes (``extended`` is then True).  ``box`` is False for states
    on the infinite line.
    """

    index: int
    parity: str
    k: float
    kappa: float
    extended: bool
    energy: float
    amp_in: float
    amp_out: float
    V0: float
    L: float
    D: float
    box: bool = True

    @property
    def bound(self):
        return self.energy < 0

    @property
    def well(self):
        return WellSpec(V0=self.V0, L=self.L, D=self.D)

    def to_json(self):
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


# --- outside solutions ------------------------------------------------------
#
# For the box, the outside solution is anchored at the wall: sigma(y) with y the
# distance from the wall, sigma(0) = 0.  For E < 0 it is rescaled by
# exp(-q b) (b = distance from junction to wall) so deep states never overflow.

def _sigma(y, q, p, b):
    """Outside solution and its y-derivative, anchored at the wall."""
    y = np.asarray(y, dtype=float)
    if p > 0:
        return np.sin(p * y) / p, np.cos(p * y)
    if q == 0:
        return y.copy(), np.ones_like(y)
    if q * b < _BIG_EXPONENT:
        scale = math.exp(-q * b)
        return scale * np.sinh(q * y) / q, scale * np.cosh(q * y)
    a, c = np.exp(q * (y - b)), np.exp(-q * (y + b))
    return (a - c) / (2 * q), (a + c) / 2


def _inside(x, k, parity):
    """cos(kx) or sin(kx)/k and the x-derivative."""
    x = np.asarray(x, dtype=float)
    if parity == "even":
        return np.cos(k * x), -k * np.sin(k * x)
    if k == 0:
        return x.copy(), np.ones_like(x)
    return np.sin(k * x) / k, np.cos(k * x)


def _outside_wavenumbers(k, V0):
    diff = 2.0 * V0 - k * k
    if diff > 0:
        return math.sqrt(diff), 0.0
    return 0.0, math.sqrt(-diff)


def _box_mismatch(k, well, parity):
    """Matching function whose zeros in k are the box eigenstates of a given parity.

    Equal to psi_in(L/2) sigma'(b) + psi_in'(L/2) sigma(b); it has no poles and,
    for E < 0, carries a positive exp(-q b) factor that does not move its zeros.
    """
    q, p = _outside_wavenumbers(k, well.V0)
    b = well.half_box - well.half_width
    val, der = _inside(well.half_width, k, parity)
    s, ds = _sigma(b, q, p, b)
    return float(val * ds + der * s)


def _node_count(k, q, p, b, L, parity):
    """Number of interior zeros of a box mode (analytic)."""
    half = 0.5 * k * L
    if parity == "even":
        inner = 2 * max(0, math.floor((half - 0.5 * math.pi) / math.pi) + 1) if half > 0.5 * math.pi else 0
    else:
        inner = 1 + 2 * max(0, math.ceil(half / math.pi) - 1)
    outer = 0
    if p > 0:
        outer = 2 * max(0, math.ceil(p * b / math.pi) - 1)
    return inner + outer


def _box_state(k, well, parity):
    q, p = _outside_wavenumbers(k, well.V0)
    b = well.half_box - well.half_width
    val, der = _inside(well.half_width, k, parity)
    s, ds = _sigma(b, q, p, b)
    # least-squares match of value and slope; both agree to root precision
    w = 1.0 / max(k, q, p, 1.0)
    s, ds = float(s), float(ds)
    amp_out = (float(val) * s - w * w * float(der) * ds) / (s * s + w * w * ds * ds)
    state = SingleParticleState(
        index=-1, parity=parity, k=k, kappa=p if p > 0 else q, extended=p > 0,
        energy=0.5 * k * k - well.V0, amp_in=1.0, amp_out=amp_out,
        V0=well.V0, L=well.L, D=well.D, box=True,
    )
    x, wts = box_quadrature(well, max(k, p, 1.0))
    norm = math.sqrt(float(np.sum(wts * evaluate_wavefunction(state, x) ** 2)))
    return _replace(state, amp_in=1.0 / norm, amp_out=amp_out / norm)


def _replace(state, **kw):
    d = asdict(state)
    d.update(kw)
    return SingleParticleState(**d)


# --- public API -------------------------------------------------------------

def bound_state_count(well):
    """floor(sqrt(2 V0) L / pi) + 1 for V0 > 0."""
    if well.V0 <= 0:
        return 0
    return int(math.floor(math.sqrt(2 * well.V0) * well.L / math.pi)) + 1


def solve_bound_states(well, max_count=None):
    """Bound states of the finite well on the infinite line, sorted by energy.

    With u0 = sqrt(2 V0) L / 2 and the angle theta defined by
    kL/2 = u0 sin(theta), qL/2 = u0 cos(theta), the even and odd matching
    conditions collapse to ``u0 sin(theta) + theta = (n + 1) pi / 2`` (n even
    for even states, odd for odd ones).  The left side is monotone in
    theta on [0, pi/2], so each root is bracketed exactly, and the decay
    constant q is computed directly from cos(theta) without cancellation as
    the state approaches threshold.
    """
    if not well.V0 > 0:
        raise ConfigError("bound states need V0 > 0")
    u0 = math.sqrt(2.0 * well.V0) * well.L / 2.0
    total = bound_state_count(well)
    n_states = total if max_count is None else min(total, max_count)
    states = []
    for n in range(n_states):
        target = (n + 1) * math.pi / 2
        f = lambda th: u0 * math.sin(th) + th - target
        if f(math.pi / 2) <= 0:
            # only reachable when u0 is exactly n*pi/2 in floating point
            break
        theta = brentq(f, 0.0, math.pi / 2, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
        k = 2.0 * u0 * math.sin(theta) / well.L
        q = 2.0 * u0 * math.cos(theta) / well.L
        parity = "even" if n % 2 == 0 else "odd"
        val, _ = _inside(well.half_width, k, parity)
        state = SingleParticleState(
            index=n, parity=parity, k=k, kappa=q, extended=False,
            energy=-0.5 * q * q, amp_in=1.0, amp_out=float(val),
            V0=well.V0, L=well.L, D=math.inf, box=False,
        )
        states.append(_replace(state, amp_in=1.0 / math.sqrt(_line_norm2(state)),
                               amp_out=float(val) / math.sqrt(_line_norm2(state))))
    return states


def _line_norm2(state):
    k, L, q = state.k, state.L, state.kappa
    if state.parity == "even":
        inner = L / 2 + math.sin(k * L) / (2 * k)
    else:
        inner = (L / 2 - math.sin(k * L) / (2 * k)) / (k * k)
    return inner + 2 * state.amp_out**2 / (2 * q)


def solve_box_states(well, count, k_step=None, max_refinements=6):
    """The ``count`` lowest modes of the well inside a hard-wall box.

    Roots of the matching function are bracketed on a uniform k grid and
    polished with Brent's method.  The analytic node count of every state is
    compared with its position in the spectrum; a mismatch means two roots
    shared a grid cell, and the grid is refined.
    """
    if count < 1:
        raise ConfigError("need at least one box state")
    if not well.D > well.L:
        raise ConfigError("box must be larger than the well")
    step = k_step or min(math.pi / (4 * max(well.L, 1.0)), math.pi / (4 * well.D))
    b = well.half_box - well.half_width
    last_bad = (0.0, 0.0)
    for _ in range(max_refinements):
        roots = _box_roots(well, count, step)
        roots.sort(key=lambda r: r[0])
        bad = None
        for n, (k, parity) in enumerate(roots[:count]):
            q, p = _outside_wavenumbers(k, well.V0)
            if _node_count(k, q, p, b, well.L, parity) != n:
                lo = roots[n - 1][0] if n else 0.0
                bad = (lo, k)
                break
        if bad is None:
            states = [_box_state(k, well, parity) for k, parity in roots[:count]]
            return [_replace(s, index=n) for n, s in enumerate(states)]
        last_bad = bad
        step /= 4
    raise RootBracketError("could not bracket all box modes; bracketing grid too coarse", last_bad)


def _box_roots(well, count, step):
    k_hi = math.sqrt(2 * well.V0) + (count + 2) * math.pi / (well.D - well.L) + step
    while True:
        grid = np.arange(0.0, k_hi + step, step)
        roots = []
        for parity in ("even", "odd"):
            vals = np.array([_box_mismatch(k, well, parity) for k in grid])
            for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]:
                a, c = grid[i], grid[i + 1]
                if vals[i] == 0:
                    if a > 0:
                        roots.append((float(a), parity))
                    continue
                if vals[i + 1] == 0:
                    continue
                k = brentq(_box_mismatch, a, c, args=(well, parity), xtol=_ROOT_XTOL,
                           rtol=4 * np.finfo(float).eps, maxiter=200)
                roots.append((float(k), parity))
        if len(roots) >= count + 1:
            return roots
        k_hi *= 2


def evaluate_wavefunction(state, x, derivative=False):
    """Value (and optionally x-derivative) of an orbital at positions x."""
    x = np.asarray(x, dtype=float)
    half = 0.5 * state.L
    if state.box and np.any(np.abs(x) > 0.5 * state.D * (1 + 1e-12)):
        raise ConfigError("position outside the box")
    ax = np.abs(x)
    inside = ax <= half
    val_in, der_in = _inside(x, state.k, state.parity)
    # outside: f(|x|) and df/d|x|
    if state.box:
        b = 0.5 * state.D - half
        q, p = (0.0, state.kappa) if state.extended else (state.kappa, 0.0)
        f, df = _sigma(np.clip(0.5 * state.D - ax, 0.0, None), q, p, b)
        df = -df
    else:
        f = np.exp(-state.kappa * (ax - half))
        df = -state.kappa * f
    par = 1.0 if state.parity == "even" else -1.0
    left = x < 0
    psi = np.where(inside, state.amp_in * val_in,
                   state.amp_out * f * np.where(left, par, 1.0))
    if not derivative:
        return psi
    dpsi = np.where(inside, state.amp_in * der_in,
                    state.amp_out * df * np.where(left, -par, 1.0))
    return psi, dpsi


# --- quadrature -------------------------------------------------------------

def _gauss_legendre(a, b, n_sub, order):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, n_sub + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return x, w


def box_quadrature(well, k_max, order=16, per_wavelength=2.0):
    """Composite Gauss-Legendre nodes over the box, split at the well edges.

    Sub-intervals are no longer than L/4 or ``per_wavelength / k_max``; the
    default resolves products of four modes of wavenumber up to ``k_max``.
    """
    h = min(well.L / 4, per_wavelength / max(k_max, 1e-12))
    a, c = well.half_width, well.half_box
    pieces = [(-c, -a), (-a, a), (a, c)]
    xs, ws = [], []
    for lo, hi in pieces:
        n_sub = max(1, int(math.ceil((hi - lo) / h)))
        x, w = _gauss_legendre(lo, hi, n_sub, order)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def mode_matrix(states, x):
    """Rows are the orbitals sampled at x."""
    return np.array([evaluate_wavefunction(s, x) for s in states])


def _k_scale(states):
    return max(max(s.k, s.kappa if s.extended else 0.0) for s in states)


def quartic_overlap(states, order=16):
    """Integral over the box of the product of four orbitals."""
    if len(states) != 4:
        raise ConfigError("quartic_overlap takes exactly four states")
    first = states[0]
    if any((s.V0, s.L, s.D, s.box) != (first.V0, first.L, first.D, first.box) for s in states):
        raise ConfigError("states come from different bases")
    parity = sum(s.parity == "odd" for s in states) % 2
    if parity:
        return 0.0
    x, w = box_quadrature(first.well, _k_scale(states), order=order)
    prod = np.prod(mode_matrix(states, x), axis=0)
    return float(np.sum(w * prod))


def overlap_matrix(states, order=16):
    x, w = box_quadrature(states[0].well, _k_scale(states), order=order)
    phi = mode_matrix(states, x)
    return (phi * w) @ phi.T
