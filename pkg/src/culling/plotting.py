"""Figures written next to the CSV output (non-interactive backend)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    # no version stamp, so repeated runs give byte-identical PNGs
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_levels(rows, path, title="Bound levels"):
    """rows: (V0, N, level, energy, bound); ground levels thick, excitations thin."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    curves = {}
    for V0, N, idx, e, bound in rows:
        if bound:
            curves.setdefault((N, idx), []).append((V0, e))
    for (N, idx), pts in sorted(curves.items()):
        pts.sort()
        xs, ys = zip(*pts)
        ax.plot(xs, ys, color=f"C{(N - 1) % 10}", lw=2.0 if idx == 0 else 0.6,
                label=f"N={N}" if idx == 0 else None)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("well depth $V_0$")
    ax.set_ylabel("energy")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_variational(V0_grid, results, path):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax1.plot(V0_grid, [r.kappa1 for r in results], label=r"$\kappa_1$")
    ax1.plot(V0_grid, [r.kappa2 for r in results], label=r"$\kappa_2$")
    ax1.plot(V0_grid, [r.single_orbital_kappa for r in results], "--", label="single orbital")
    ax1.set_ylabel(r"$\kappa$")
    ax1.legend(fontsize=8)
    ax2.plot(V0_grid, [r.energy for r in results], label="two orbitals")
    ax2.plot(V0_grid, [r.single_orbital_energy for r in results], "--", label="single orbital")
    ax2.set_xlabel("well depth $V_0$")
    ax2.set_ylabel("energy")
    ax2.legend(fontsize=8)
    return _save(fig, path)


def plot_phase(boundary, path, region_rows=None):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    if region_rows:
        gs = sorted({r[0] for r in region_rows})
        vs = sorted({r[1] for r in region_rows})
        if len(gs) > 1 and len(vs) > 1:
            lookup = {(g, v): n for g, v, n in region_rows}
            Z = [[lookup[(g, v)] for g in gs] for v in vs]
            mesh = ax.pcolormesh(gs, vs, Z, shading="nearest", cmap="Greys", alpha=0.35)
            fig.colorbar(mesh, ax=ax, label="$N_{max}$")
    markers = {"tonks": "", "tf": "", "diag": "x", "dmc": "s"}
    styles = {"tonks": "--", "tf": "-.", "diag": "-", "dmc": ":"}
    for method in sorted({p.method for p in boundary.points}):
        for N in sorted({p.N for p in boundary.points if p.method == method}):
            pts = [p for p in boundary.curve(N, method) if math.isfinite(p.V0)]
            if not pts:
                continue
            ax.errorbar([p.g for p in pts], [p.V0 for p in pts], yerr=[p.error for p in pts],
                        ls=styles[method], marker=markers[method], color=f"C{N % 10}",
                        label=f"{method} N={N}")
    ax.set_xlabel("coupling $g$")
    ax.set_ylabel("threshold depth $V_{0,N}$")
    ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def plot_trace(trace, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [s.depth for s in trace.samples]
    ax.step(xs, [s.N_max for s in trace.samples], where="post")
    bad = [s for s in trace.samples if not s.adiabatic]
    if bad:
        ax.plot([s.depth for s in bad], [s.N_max for s in bad], "r.", label="rate too high")
        ax.legend(fontsize=8)
    ax.invert_xaxis()
    ax.set_xlabel("well depth $V_0$")
    ax.set_ylabel("$N_{max}$")
    return _save(fig, path)


def plot_dmc(result, path):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5))
    ax1.plot(result.block_energies, ".-")
    ax1.axhline(result.energy, color="k", lw=0.6)
    ax1.set_ylabel("block energy")
    ax2.plot(result.population_history, lw=0.5)
    ax2.axhline(result.config.walkers, color="k", lw=0.6)
    ax2.set_xlabel("step")
    ax2.set_ylabel("walkers")
    return _save(fig, path)
