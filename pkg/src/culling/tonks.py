"""Impenetrable bosons through the Bose-Fermi mapping.

An N-boson eigenstate is the modulus of a Slater determinant of distinct
single-particle orbitals, so every energy is a sum of distinct bound
single-particle energies.  The well holds N particles only while it has N
bound orbitals.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass

import numpy as np

from .model import CullingError, WellSpec
from .single_particle import bound_state_count, solve_bound_states

DEFAULT_MAX_LEVELS = 50


class UnboundError(CullingError):
    """The well binds fewer single-particle states than requested particles."""

    def __init__(self, N, available):
        self.N = N
        self.available = available
        super().__init__(f"UNBOUND({N}): only {available} bound orbitals")


@dataclass(frozen=True)
class TonksLevel:
    N: int
    occupied: tuple
    energy: float
    bound: bool


def tonks_threshold(N, L=1.0):
    """Smallest depth binding N impenetrable bosons: (pi (N-1) / L)**2 / 2."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return 0.5 * (math.pi * (N - 1) / L) ** 2


def single_particle_energies(well):
    if well.V0 <= 0:
        return np.empty(0)
    return np.array([s.energy for s in solve_bound_states(well)])


def tonks_ground_energy(well, N):
    energies = single_particle_energies(well)
    if len(energies) < N:
        raise UnboundError(N, len(energies))
    return float(np.sum(energies[:N]))


def level_energy(energies, occupied):
    return float(sum(energies[j] for j in occupied))


def lowest_configurations(energies, N, max_levels=DEFAULT_MAX_LEVELS):
    """The ``max_levels`` cheapest sets of N distinct indices, best first."""
    n_modes = len(energies)
    if n_modes < N:
        return []
    start = tuple(range(N))
    heap = [(level_energy(energies, start), start)]
    seen = {start}
    out = []
    while heap and len(out) < max_levels:
        e, occ = heapq.heappop(heap)
        out.append((e, occ))
        for i in range(N):
            nxt = occ[i] + 1
            limit = occ[i + 1] if i + 1 < N else n_modes
            if nxt < limit:
                cand = occ[:i] + (nxt,) + occ[i + 1:]
                if cand not in seen:
                    seen.add(cand)
                    heapq.heappush(heap, (level_energy(energies, cand), cand))
    return out


def tonks_bound_spectrum(well, N, max_levels=DEFAULT_MAX_LEVELS):
    """Bound N-particle levels (ground plus excitations), sorted by energy."""
    energies = single_particle_energies(well)
    return [TonksLevel(N=N, occupied=occ, energy=e, bound=True)
            for e, occ in lowest_configurations(energies, N, max_levels)]


def max_bound_number(well):
    """Largest N the well can hold in the Tonks limit."""
    return bound_state_count(well)


def merge_depth(N, L=1.0, lo=0.0, hi=None, tol=1e-10):
    """Depth where the N-particle ground level merges with the (N-1)-particle one.

    Bisects on the sign of E(N) - E(N-1), i.e. on whether the N-th orbital is
    bound, using only ground-energy evaluations.
    """
    if N == 1:
        return 0.0
    if hi is None:
        hi = 2.0 * tonks_threshold(N, L) + 10.0

    def holds(V0):
        well = WellSpec(V0=V0, L=L)
        try:
            upper = tonks_ground_energy(well, N)
        except UnboundError:
            return False
        return upper - tonks_ground_energy(well, N - 1) < 0

    if holds(lo) or not holds(hi):
        raise CullingError(f"merge depth for N={N} is not bracketed by [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if holds(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def final_stage_gap_tonks(N, L=1.0):
    """E(N-1) - E(N) at the depth where N+1 particles just stop being bound.

    This is the binding energy of the N-th orbital, found from the matching
    condition at V0 = tonks_threshold(N + 1).
    """
    well = WellSpec(V0=tonks_threshold(N + 1, L), L=L)
    states = solve_bound_states(well, max_count=N)
    if len(states) < N:
        raise UnboundError(N, len(states))
    return -states[N - 1].energy


def depth_interval_tonks(N, L=1.0):
    """V_{0,N+1} - V_{0,N} = pi**2 (N - 1/2) / L**2."""
    return tonks_threshold(N + 1, L) - tonks_threshold(N, L)


def max_rate_tonks(N, L=1.0):
    """Upper scale for |dV0/dt| in the last culling stage: E_gap times the depth interval."""
    return final_stage_gap_tonks(N, L) * depth_interval_tonks(N, L)


def gap_linear_fit(Ns, L=1.0):
    """Least-squares (A, B) for E_gap = A N + B over the given N."""
    Ns = np.asarray(list(Ns), dtype=float)
    gaps = [final_stage_gap_tonks(int(n), L) for n in Ns]
    A, B = np.polyfit(Ns, gaps, 1)
    return float(A), float(B)


def track_configuration(occupied, V0_path, L=1.0):
    """Follow a Tonks configuration adiabatically down a descending depth path.

    Orbitals keep their labels as the well is lowered; when an occupied orbital
    stops being bound its particle leaves.  Returns a list of
    (V0, remaining occupied tuple, energy).
    """
    occ = tuple(sorted(occupied))
    trace = []
    for V0 in V0_path:
        well = WellSpec(V0=float(V0), L=L)
        energies = single_particle_energies(well)
        occ = tuple(j for j in occ if j < len(energies))
        trace.append((float(V0), occ, level_energy(energies, occ)))
    return trace


def sweep_levels(V0_grid, n_max, L=1.0, excitations=False, max_levels=DEFAULT_MAX_LEVELS):
    """Rows (V0, N, level_index, energy, bound) for N = 1..n_max across the grid."""
    rows = []
    for V0 in V0_grid:
        well = WellSpec(V0=float(V0), L=L)
        energies = single_particle_energies(well)
        for N in range(1, n_max + 1):
            limit = max_levels if excitations else 1
            for idx, (e, _occ) in enumerate(lowest_configurations(energies, N, limit)):
                rows.append((float(V0), N, idx, e, True))
    return rows


def write_levels_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write("# schema: tonks-levels v1\n")
        writer = csv.writer(fh)
        writer.writerow(["V0", "N", "level_index", "energy", "bound"])
        for V0, N, idx, e, b in rows:
            writer.writerow([repr(V0), N, idx, repr(e), int(b)])
