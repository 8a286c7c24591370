"""Command-line front end.

Every subcommand writes plain CSV/JSON, a PNG figure per data file and a
``manifest.json`` listing the inputs, the seed and a sha256 of every output.
Exit codes: 0 success, 2 bad configuration, 3 numerical non-convergence.
Errors are also printed to stderr as one JSON record.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .model import ConfigError, ConvergenceError, CullingError, RunConfig, ScheduleSpec, \
    WellSpec, load_config, parse_grid

WORKERS_ENV = "CULLING_WORKERS"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _progress(msg):
    print(f"progress: {msg}", file=sys.stderr, flush=True)


def _grid(args, cfg, name, default, attr=None):
    flag = getattr(args, attr or name, None)
    if flag is not None:
        try:
            return parse_grid(flag)
        except ValueError as exc:
            raise ConfigError(f"--{name}: {exc}") from None
    return cfg.grids.get(name, default)


def _option(args, cfg, name, default, cast=float):
    val = getattr(args, name, None)
    if val is None:
        val = cfg.options.get(name, default)
    try:
        return None if val is None else cast(val)
    except (TypeError, ValueError):
        raise ConfigError(f"option {name!r} has bad value {val!r}") from None


def _coupling(args, cfg):
    return cfg.interaction.g if args.g is None else float(args.g)


def _workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def _map(fn, items):
    """Ordered map over independent tasks, in a process pool when workers > 1."""
    items = list(items)
    n = _workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with concurrent.futures.ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


class Outputs:
    def __init__(self, directory, plot=True):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        if not os.access(self.dir, os.W_OK):
            raise ConfigError(f"output directory {self.dir} is not writable")
        self.plot = plot
        self.files = []

    def path(self, name):
        p = self.dir / name
        self.files.append(p)
        return p

    def figure(self, name, fn, *a, **kw):
        if self.plot:
            fn(*a, path=self.path(name), **kw)

    def manifest(self, record):
        record = dict(record)
        record["version"] = __version__
        record["files"] = {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                           for p in self.files}
        with open(self.dir / "manifest.json", "w") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return record


# --- pool tasks (module level so they pickle) ----------------------------------------

def _spectrum_point(task):
    from . import exact_diag

    V0, n_max, g, L, D, M, k = task
    _progress(f"diag V0={V0}")
    return exact_diag.level_rows([V0], range(1, n_max + 1), g, L=L, D=D, M=M, k=k)


def _variational_point(task):
    from . import meanfield

    N, g, V0, L = task
    return meanfield.minimize_two_orbital(N, g, WellSpec(V0=V0, L=L))


def _phase_point(task):
    from . import scan

    g, V0_grid, method, n_max, L, D, dmc_cfg = task
    _progress(f"{method} g={g}")
    return scan.phase_diagram([g], V0_grid, method, n_max=n_max, L=L, D=D,
                              dmc_config=dmc_cfg).points


# --- subcommands -------------------------------------------------------------------

def cmd_spectrum(args, cfg, out):
    from . import exact_diag, tonks

    V0_grid = _grid(args, cfg, "V0", list(np.linspace(0.5, 80.0, 160)))
    n_max = _option(args, cfg, "n_max", 5, int)
    L = cfg.well.L
    if args.method == "tonks":
        levels = 20 if args.excitations else 1
        rows = tonks.sweep_levels(V0_grid, n_max, L=L, excitations=args.excitations,
                                  max_levels=levels)
        tonks.write_levels_csv(rows, out.path("levels_tonks.csv"))
    else:
        g = _coupling(args, cfg)
        M = _option(args, cfg, "modes", exact_diag.DEFAULT_MODES, int)
        k = 6 if args.excitations else 1

        tasks = [(V0, n_max, g, L, cfg.well.D, M, k) for V0 in V0_grid]
        rows = [r for chunk in _map(_spectrum_point, tasks) for r in chunk]
        exact_diag.write_levels_csv(rows, out.path("levels_diag.csv"))
    from .plotting import plot_levels

    out.figure(f"levels_{args.method}.png", plot_levels, rows)
    return {"method": args.method, "grids": {"V0": V0_grid}, "n_max": n_max}


def cmd_variational(args, cfg, out):
    from . import meanfield
    from .plotting import plot_variational

    N = _option(args, cfg, "N", 3, int)
    g = _coupling(args, cfg)
    V0_grid = _grid(args, cfg, "V0", list(np.linspace(1.5, 10.0, 20)))
    order = V0_grid[::-1] if args.reverse else V0_grid
    tasks = [(N, g, V0, cfg.well.L) for V0 in order]
    results = dict(zip(order, _map(_variational_point, tasks)))
    # rows always written in ascending depth, whatever order they were solved in
    V0_sorted = sorted(V0_grid)
    res = [results[v] for v in V0_sorted]
    meanfield.write_variational_csv(V0_sorted, res, out.path("variational.csv"))
    out.figure("variational.png", plot_variational, V0_sorted, res)
    degenerate = bool(g == 0 and all(abs(r.kappa1 - r.kappa2) < 1e-6 for r in res))
    return {"method": "variational", "N": N, "g": g, "grids": {"V0": V0_sorted},
            "degenerate": degenerate}


def cmd_phase(args, cfg, out):
    from . import scan
    from .dmc import DmcConfig
    from .plotting import plot_phase, plot_trace

    g_grid = _grid(args, cfg, "g", [0.25, 0.5, 1.0, 2.0, 4.0], attr="g_grid")
    V0_grid = _grid(args, cfg, "V0", list(np.linspace(0.25, 80.0, 320)))
    n_max = _option(args, cfg, "n_max", 5, int)
    method = args.method or cfg.options.get("method", "tf")
    dmc_cfg = DmcConfig(seed=args.seed) if method == "dmc" else None

    tasks = [(g, V0_grid, method, n_max, cfg.well.L, cfg.well.D, dmc_cfg) for g in g_grid]
    boundary = scan.PhaseBoundary([p for chunk in _map(_phase_point, tasks) for p in chunk])
    scan.write_boundary_csv(boundary, out.path("phase_boundary.csv"))
    rows = scan.region_map(boundary, g_grid, V0_grid, method)
    scan.write_region_csv(rows, out.path("region_map.csv"))
    out.figure("phase.png", plot_phase, boundary, region_rows=rows)
    record = {"method": method, "grids": {"g": g_grid, "V0": V0_grid}, "n_max": n_max,
              "violations": boundary.violations()}
    if args.staircase is not None:
        try:
            g = float(str(args.staircase).split("=")[-1])
        except ValueError:
            raise ConfigError(f"--staircase expects a coupling, got {args.staircase!r}") from None
        path = sorted(V0_grid, reverse=True)
        sb = boundary if g in g_grid else scan.phase_diagram([g], V0_grid, method, n_max=n_max,
                                                            L=cfg.well.L, D=cfg.well.D,
                                                            dmc_config=dmc_cfg)
        trace = scan.culling_staircase(g, path, method, L=cfg.well.L, boundary=sb)
        scan.write_trace_csv(trace, out.path("staircase.csv"))
        out.figure("staircase.png", plot_trace, trace)
        record["staircase_g"] = g
    return record


def cmd_cull(args, cfg, out):
    from . import scan
    from .plotting import plot_trace

    schedule = cfg.schedule
    if args.tau is not None or args.rate is not None or schedule is None:
        V_start = args.V_start if args.V_start is not None else cfg.well.V0
        shape = "linear" if args.rate is not None else "exponential"
        tau = args.tau if args.tau is not None else (1.0 if args.rate is None else None)
        schedule = ScheduleSpec(V0=V_start, shape=shape, tau=tau, rate=args.rate)
    N = _option(args, cfg, "N", 1, int)
    eta = _option(args, cfg, "eta", scan.DEFAULT_ETA)
    limit = args.limit or cfg.options.get("limit", "tonks")
    trace = scan.adiabatic_analysis(schedule, N, g=_coupling(args, cfg), limit=limit, eta=eta,
                                    L=cfg.well.L)
    scan.write_trace_csv(trace, out.path("cull_trace.csv"))
    with open(out.path("cull_summary.json"), "w") as fh:
        fh.write(trace.to_json() + "\n")
    out.figure("cull_trace.png", plot_trace, trace)
    return {"method": limit, "schedule": json.loads(trace.to_json())["schedule"],
            "adiabatic": trace.summary["adiabatic"], "tau_min": trace.summary.get("tau_min")}


def cmd_dmc(args, cfg, out):
    from dataclasses import asdict

    from . import dmc
    from .plotting import plot_dmc

    N = _option(args, cfg, "N", 2, int)
    g = _coupling(args, cfg)
    config = dmc.DmcConfig(
        walkers=_option(args, cfg, "walkers", 1000, int),
        time_step=_option(args, cfg, "time_step", 1e-3),
        blocks=_option(args, cfg, "blocks", 50, int),
        steps_per_block=_option(args, cfg, "steps_per_block", 2000, int),
        equil_blocks=_option(args, cfg, "equil_blocks", 5, int),
        seed=args.seed,
    )
    if args.threshold:
        V0_grid = _grid(args, cfg, "V0", list(np.linspace(12.0, 1.0, 12)))
        pt = dmc.unbinding_threshold_dmc(N, g, V0_grid, L=cfg.well.L, D=cfg.well.D,
                                         config=config)
        dmc.write_threshold_csv([pt], out.path("dmc_threshold.csv"))
        with open(out.path("dmc_threshold.json"), "w") as fh:
            json.dump({"g": pt.g, "N": pt.N, "V0": pt.V0, "error": pt.error,
                       "samples": pt.samples, "config": asdict(config)}, fh, indent=2)
        return {"method": "dmc", "N": N, "g": g, "seed": args.seed, "grids": {"V0": V0_grid}}
    well = cfg.well
    if args.V0 is not None:
        depths = _grid(args, cfg, "V0", None)
        if len(depths) != 1:
            raise ConfigError("a single dmc run takes one depth in --V0")
        well = well.with_depth(depths[0])
    if args.bias_check:
        result = dmc.run_dmc_extrapolated(N, g, well, config)
    else:
        result = dmc.run_dmc(N, g, well, config)
    dmc.write_result_json(result, out.path("dmc_result.json"))
    out.figure("dmc_history.png", plot_dmc, result)
    return {"method": "dmc", "N": N, "g": g, "seed": args.seed, "energy": result.energy,
            "stderr": result.stderr}


COMMANDS = {"spectrum": cmd_spectrum, "variational": cmd_variational, "phase": cmd_phase,
            "cull": cmd_cull, "dmc": cmd_dmc}


def build_parser():
    p = argparse.ArgumentParser(prog="culling", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="key = value configuration file")
    common.add_argument("-o", "--out", default="culling_out", help="output directory")
    common.add_argument("--seed", type=int, default=12345)
    common.add_argument("--g", type=float, help="contact coupling (overrides config)")
    common.add_argument("--V0", help="depth grid start:stop:num or a,b,c")
    common.add_argument("--no-plot", dest="plot", action="store_false")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spectrum", parents=[common], help="bound levels against well depth")
    s.add_argument("--method", choices=["tonks", "diag"], default="tonks")
    s.add_argument("--n-max", dest="n_max", type=int)
    s.add_argument("--modes", type=int)
    s.add_argument("--excitations", action="store_true")

    s = sub.add_parser("variational", parents=[common], help="two-orbital kappa scan")
    s.add_argument("--N", type=int)
    s.add_argument("--reverse", action="store_true", help="solve the grid from deep to shallow")

    s = sub.add_parser("phase", parents=[common], help="threshold depths over a g grid")
    s.add_argument("--method", choices=["tonks", "tf", "diag", "dmc"])
    s.add_argument("--g-grid", dest="g_grid", help="coupling grid start:stop:num or a,b,c")
    s.add_argument("--n-max", dest="n_max", type=int)
    s.add_argument("--staircase", metavar="G", help="also write N_max(V0) at coupling G (or g=G)")

    s = sub.add_parser("cull", parents=[common], help="ramp speed against the gap criterion")
    s.add_argument("--N", type=int, help="target atom number")
    s.add_argument("--limit", choices=["tonks", "meanfield"])
    s.add_argument("--V-start", dest="V_start", type=float)
    s.add_argument("--tau", type=float)
    s.add_argument("--rate", type=float)
    s.add_argument("--eta", type=float)

    s = sub.add_parser("dmc", parents=[common], help="diffusion Monte Carlo energy or threshold")
    s.add_argument("--N", type=int)
    s.add_argument("--walkers", type=int)
    s.add_argument("--time-step", dest="time_step", type=float)
    s.add_argument("--blocks", type=int)
    s.add_argument("--steps", dest="steps_per_block", type=int)
    s.add_argument("--equil-blocks", dest="equil_blocks", type=int)
    s.add_argument("--bias-check", action="store_true", help="extra run at twice the time step")
    s.add_argument("--threshold", action="store_true", help="extrapolate the unbinding depth")
    return p


def _error(kind, exc, code):
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "line", None) is not None:
        record["line"] = exc.line
    if getattr(exc, "residual", None) is not None:
        record["residual"] = exc.residual
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        out = Outputs(args.out, plot=args.plot)
        record = COMMANDS[args.command](args, cfg, out)
        record.update({"subcommand": args.command, "config": args.config,
                       "output_dir": str(out.dir), "seed": args.seed})
        out.manifest(record)
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG)
    except ConvergenceError as exc:
        return _error("non_converged", exc, EXIT_NUMERIC)
    except CullingError as exc:
        return _error("numerical", exc, EXIT_NUMERIC)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
