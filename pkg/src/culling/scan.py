"""Phase diagram in the (g, V0) plane, culling staircases and ramp-rate analysis."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import exact_diag, meanfield, tonks
from .model import ConfigError, CullingError, ScheduleSpec, WellSpec

METHODS = ("tonks", "tf", "diag", "dmc")
DEFAULT_ETA = 0.1


@dataclass(frozen=True)
class BoundaryPoint:
    g: float
    V0: float
    N: int
    method: str
    error: float = 0.0
    flag: str = ""


@dataclass
class PhaseBoundary:
    """Threshold depths V_{0,N}(g): N particles stay bound for V0 above it."""

    points: list = field(default_factory=list)

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: (p.method, p.N, p.g))

    def curve(self, N, method=None):
        return [p for p in self.points if p.N == N and (method is None or p.method == method)]

    def thresholds_at(self, g, method=None):
        """{N: V0} at one coupling; failed points (nan) are skipped, regime warnings kept."""
        return {p.N: p.V0 for p in self.points
                if p.g == g and (method is None or p.method == method) and math.isfinite(p.V0)}

    def violations(self):
        """Breaches of monotonicity in N (strict) and in g (non-strict), within error bars."""
        bad = []
        for method in {p.method for p in self.points}:
            for g in sorted({p.g for p in self.points if p.method == method}):
                th = sorted(self.thresholds_at(g, method).items())
                for (n1, v1), (n2, v2) in zip(th, th[1:]):
                    if not v2 > v1:
                        bad.append(f"{method}: g={g} V0[{n2}]={v2} <= V0[{n1}]={v1}")
            for N in sorted({p.N for p in self.points if p.method == method}):
                pts = [p for p in self.curve(N, method) if math.isfinite(p.V0)]
                for a, b in zip(pts, pts[1:]):
                    if b.V0 < a.V0 - (a.error + b.error):
                        bad.append(f"{method}: N={N} V0 falls from {a.V0} to {b.V0} as g grows")
        return bad


def supported_number(V0, thresholds):
    """Largest N whose threshold lies below V0 (N = 1 needs any depth > 0)."""
    if V0 <= 0:
        return 0
    n = 1
    for N in sorted(thresholds):
        if N > 1 and V0 > thresholds[N]:
            n = max(n, N)
        elif N > 1:
            break
    return n


def _threshold(method, N, g, V0_grid, L, D, dmc_config, M):
    if method == "tonks":
        return BoundaryPoint(g, tonks.tonks_threshold(N, L), N, method)
    if method == "tf":
        flag = "" if meanfield.in_tf_regime(N, g, L) else "outside_tf_regime"
        return BoundaryPoint(g, meanfield.tf_threshold(N, g, L), N, method, flag=flag)
    if method == "diag":
        lo, hi = 1e-3, min(max(V0_grid), tonks.tonks_threshold(N, L) + 1.0)
        pt = exact_diag.threshold_scan_diag(N, g, (lo, hi), L=L, D=D, M=M)
        return BoundaryPoint(g, pt.V0, N, method, pt.error)
    if method == "dmc":
        from .dmc import unbinding_threshold_dmc

        pt = unbinding_threshold_dmc(N, g, V0_grid, L=L, D=D, config=dmc_config)
        return BoundaryPoint(g, pt.V0, N, method, pt.error)
    raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def phase_diagram(g_grid, V0_grid, method, n_max=5, L=1.0, D=None,
                  dmc_config=None, M=exact_diag.DEFAULT_MODES):
    """Threshold depths for N = 2..n_max at every g in ``g_grid``.

    Points a backend cannot deliver are kept with V0 = nan and a flag naming
    the failure instead of aborting the whole scan.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    g_grid = [float(g) for g in g_grid]
    if any(b < a for a, b in zip(g_grid, g_grid[1:])):
        raise ConfigError("g grid must be ascending")
    pts = []
    for g in g_grid:
        for N in range(2, n_max + 1):
            try:
                pts.append(_threshold(method, N, g, V0_grid, L, D, dmc_config, M))
            except CullingError as exc:
                pts.append(BoundaryPoint(g, float("nan"), N, method, flag=type(exc).__name__))
    return PhaseBoundary(pts)


def region_map(boundary, g_grid, V0_grid, method=None):
    """Rows (g, V0, N_max) over the grid."""
    rows = []
    for g in g_grid:
        th = boundary.thresholds_at(float(g), method)
        for V0 in V0_grid:
            rows.append((float(g), float(V0), supported_number(float(V0), th)))
    return rows


def write_boundary_csv(boundary, path):
    with open(path, "w", newline="") as fh:
        fh.write("# schema: phase-boundary v1\n")
        w = csv.writer(fh)
        w.writerow(["g", "N", "V0_threshold", "error", "method", "flag"])
        for p in boundary.points:
            w.writerow([repr(p.g), p.N, repr(p.V0), repr(p.error), p.method, p.flag])


def write_region_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write("# schema: region-map v1\n")
        w = csv.writer(fh)
        w.writerow(["g", "V0", "N_max"])
        w.writerows([repr(g), repr(v), n] for g, v, n in rows)


# --- staircases --------------------------------------------------------------

@dataclass(frozen=True)
class TraceSample:
    time: float
    depth: float
    N_max: int
    gap: float
    max_allowed_rate: float
    adiabatic: bool


@dataclass
class CullingTrace:
    samples: list
    schedule: ScheduleSpec | None = None
    method: str = ""
    g: float = 0.0
    summary: dict = field(default_factory=dict)

    def steps(self):
        """(depth above, depth below, N before, N after) wherever N_max drops."""
        out = []
        for a, b in zip(self.samples, self.samples[1:]):
            if b.N_max != a.N_max:
                out.append((a.depth, b.depth, a.N_max, b.N_max))
        return out

    def is_monotone(self):
        return all(b.N_max <= a.N_max for a, b in zip(self.samples, self.samples[1:]))

    def to_json(self):
        return json.dumps({
            "method": self.method, "g": self.g,
            "schedule": None if self.schedule is None else asdict(self.schedule),
            "samples": [asdict(s) for s in self.samples],
            "summary": self.summary,
        }, indent=2, sort_keys=True)


def _diag_supported(V0, g, L, D, n_max, M):
    """Largest N with E_n - E_{n-1} < 0 for every n up to N, straight from diagonalisation."""
    if V0 <= 0:
        return 0
    well = WellSpec(V0=V0, L=L, D=D)
    prev = exact_diag.ground_energy(1, g, well, M)
    n = 1
    for N in range(2, n_max + 1):
        e = exact_diag.ground_energy(N, g, well, M)
        if e - prev >= 0:
            break
        n, prev = N, e
    return n


def supported_number_direct(V0, method, g=0.0, L=1.0, D=None, n_max=5,
                            M=exact_diag.DEFAULT_MODES):
    """N_max at one depth without going through the boundary curve."""
    if V0 <= 0:
        return 0
    if method == "tonks":
        return tonks.max_bound_number(WellSpec(V0=V0, L=L))
    if method == "tf":
        if g == 0:
            raise ConfigError("the Thomas-Fermi count needs g > 0")
        return int(math.floor(V0 * L / (2 * g) - 1e-12)) + 1
    if method == "diag":
        return _diag_supported(V0, g, L, D, n_max, M)
    raise ConfigError(f"no direct count for method {method!r}")


def culling_staircase(g, V0_path, method, L=1.0, D=None, n_max=5, boundary=None,
                      M=exact_diag.DEFAULT_MODES):
    """N_max along a descending depth path.

    With ``boundary`` the count is read off the threshold curve (any method,
    including dmc); otherwise it is evaluated directly at each depth.
    """
    path = [float(v) for v in V0_path]
    if any(b > a for a, b in zip(path, path[1:])):
        raise ConfigError("culling path must be descending")
    samples = []
    th = boundary.thresholds_at(float(g), method) if boundary is not None else None
    for i, V0 in enumerate(path):
        if th is not None:
            n = supported_number(V0, th)
        else:
            n = supported_number_direct(V0, method, g, L, D, n_max, M)
        samples.append(TraceSample(float(i), V0, n, float("nan"), float("nan"), True))
    return CullingTrace(samples, method=method, g=float(g))


# --- ramp rates ---------------------------------------------------------------

def _stage_data(limit, N, g, L):
    """(gap, depth interval, upper threshold) of the stage holding exactly N."""
    if limit == "tonks":
        return (tonks.final_stage_gap_tonks(N, L), tonks.depth_interval_tonks(N, L),
                tonks.tonks_threshold(N + 1, L))
    if limit == "meanfield":
        if g <= 0:
            raise ConfigError("mean-field limit needs g > 0")
        return (meanfield.final_stage_gap_meanfield(N, g), meanfield.depth_interval_meanfield(g, L),
                meanfield.tf_threshold(N + 1, g, L))
    raise ConfigError(f"unknown limit {limit!r}; choose tonks or meanfield")


def stage_count(limit, depth, g, L=1.0):
    if limit == "tonks":
        return tonks.max_bound_number(WellSpec(V0=depth, L=L)) if depth > 0 else 0
    return supported_number_direct(depth, "tf", g, L)


def minimal_tau(limit, N, g=0.0, depth=None, eta=DEFAULT_ETA, L=1.0):
    """Smallest exponential time constant keeping V/tau <= eta * E_gap * dV0.

    ``depth`` defaults to the top of the N stage, where the relevant gap is
    the final-stage one.
    """
    if not eta > 0:
        raise ConfigError("safety factor eta must be > 0")
    gap, interval, top = _stage_data(limit, N, g, L)
    depth = top if depth is None else depth
    return depth / (eta * gap * interval)


def adiabatic_analysis(schedule, N_target, g=0.0, limit="tonks", eta=DEFAULT_ETA, L=1.0,
                       n_samples=200, stop_margin=0.1):
    """Check an exponential or linear ramp against the final-stage gap criterion.

    Every stage N between the starting count and ``N_target`` must satisfy
    |dV/dt| <= eta * E_gap(N) * dV0(N) on reaching its upper threshold.  The
    ramp should end on the deep side of the target window, just below the
    depth where N_target + 1 would unbind, because the gap closes at the
    shallow end.
    """
    if N_target < 1:
        raise ConfigError("N_target must be >= 1")
    if limit == "meanfield" and not meanfield.in_tf_regime(N_target, g, L):
        raise ConfigError(f"mean-field limit needs N g L >= {meanfield.TF_REGIME_FACTOR}")
    n_start = stage_count(limit, schedule.V0, g, L)
    if n_start < N_target:
        raise ConfigError(f"the starting depth holds only {n_start} particles")
    gap_t, interval_t, top_t = _stage_data(limit, N_target, g, L)
    low_t = top_t - interval_t
    stop_depth = top_t - stop_margin * interval_t
    t_stop = schedule.time_to_depth(stop_depth)

    stages = {}
    for N in range(N_target, n_start + 1):
        gap, interval, top = _stage_data(limit, N, g, L)
        allowed = eta * gap * interval
        t_top = schedule.time_to_depth(min(top, schedule.V0))
        stages[N] = {
            "gap": gap, "depth_interval": interval, "upper_threshold": top,
            "max_allowed_rate": allowed,
            "rate_at_threshold": schedule.rate_at(t_top),
            "dimensionless_rate": gap * interval,
        }
        if schedule.shape == "exponential":
            stages[N]["tau_min"] = min(top, schedule.V0) / allowed

    samples = []
    for t in np.linspace(0.0, t_stop, n_samples):
        depth = schedule.depth(t)
        n = stage_count(limit, depth, g, L)
        if n < N_target:
            n = N_target
        st = stages[n]
        rate = schedule.rate_at(t)
        samples.append(TraceSample(float(t), depth, n, st["gap"], st["max_allowed_rate"],
                                   bool(rate <= st["max_allowed_rate"])))
    summary = {
        "limit": limit, "eta": eta, "N_target": N_target, "N_start": n_start,
        "target_window": [low_t, top_t], "stop_depth": stop_depth, "stop_time": t_stop,
        "stages": {str(k): v for k, v in stages.items()},
        "adiabatic": all(s.adiabatic for s in samples),
    }
    if schedule.shape == "exponential":
        summary["tau_min"] = max(v["tau_min"] for v in stages.values())
    return CullingTrace(samples, schedule=schedule, method=limit, g=float(g), summary=summary)


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        fh.write("# schema: culling-trace v1\n")
        w = csv.writer(fh)
        w.writerow(["time", "depth", "N_max", "gap", "max_allowed_rate", "adiabatic"])
        for s in trace.samples:
            w.writerow([repr(s.time), repr(s.depth), s.N_max, repr(s.gap),
                        repr(s.max_allowed_rate), int(s.adiabatic)])


# --- initial excitations ----------------------------------------------------------

def allowed_initial_excitations(M, N):
    """How many of the lowest M-atom excitations still end with N bound atoms."""
    if not (isinstance(M, (int, np.integer)) and isinstance(N, (int, np.integer))):
        raise ConfigError("M and N must be integers")
    if N < 1 or M < N:
        raise ConfigError(f"need M >= N >= 1, got M={M}, N={N}")
    return M - N


def tonks_excitation_check(M, N, L=1.0, n_path=60):
    """Follow the lowest M-atom Tonks levels down to the N window.

    The start depth sits in the middle of the window holding 2M - N atoms,
    deep enough that M - N excitations of M atoms are bound.  The end depth is
    on the deep side of the N window.  Returns (final count per level, number
    of leading levels that end with N atoms).
    """
    allowed = allowed_initial_excitations(M, N)
    n_orb = 2 * M - N
    start = 0.5 * (tonks.tonks_threshold(n_orb, L) + tonks.tonks_threshold(n_orb + 1, L))
    end = tonks.tonks_threshold(N + 1, L) - 0.1 * tonks.depth_interval_tonks(N, L)
    energies = tonks.single_particle_energies(WellSpec(V0=start, L=L))
    levels = tonks.lowest_configurations(energies, M, max_levels=allowed + 5)
    path = np.linspace(start, end, n_path)
    counts = [len(tonks.track_configuration(occ, path, L)[-1][1]) for _, occ in levels]
    leading = 0
    for c in counts:
        if c < N:
            break
        leading += 1
    return counts, leading
