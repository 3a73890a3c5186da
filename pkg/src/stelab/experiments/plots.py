"""Static SVG figures drawn from the CSV artifacts of a run."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import read_trajectory_csv  # noqa: E402


def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_trajectories(root: Path, prefix: str, out: Path) -> Path | None:
    odes = sorted(root.glob(f"{prefix}*_ode.csv"))
    sims = {p.name[: -len("_sim.csv")]: p for p in root.glob(f"{prefix}*_sim.csv")}
    if not odes and not sims:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    keys = sorted({p.name[: -len("_ode.csv")] for p in odes} | set(sims))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, key in enumerate(keys):
        color = colors[i % len(colors)]
        label = key[len(prefix):].strip("_") or key
        ode_path = root / f"{key}_ode.csv"
        if ode_path.exists():
            d = read_trajectory_csv(ode_path)
            ax.plot(d["tau"], d["eps_g"], color=color, label=label)
        if key in sims:
            d = read_trajectory_csv(sims[key])
            ax.errorbar(d["tau"], d["eps_g"], yerr=d["eps_g_stderr"], fmt="o", ms=2.5, color=color,
                        label=None if ode_path.exists() else label)
    ax.set_xlabel("tau")
    ax.set_ylabel("eps_g")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_density(root: Path, prefix: str, out: Path) -> Path | None:
    hist, dens = root / f"{prefix}_hist.csv", root / f"{prefix}_density.csv"
    if not dens.exists():
        return None
    pde = defaultdict(list)
    for r in _read_rows(dens):
        pde[float(r["tau"])].append((float(r["cell_center"]), float(r["density"])))
    sim = defaultdict(list)
    if hist.exists():
        for r in _read_rows(hist):
            sim[float(r["tau"])].append((float(r["bin_left"]), float(r["bin_right"]), float(r["density"])))
    taus = [t for t in sorted(pde) if t > 0] or sorted(pde)
    fig, axes = plt.subplots(1, len(taus), figsize=(3 * len(taus), 3), squeeze=False)
    for ax, t in zip(axes[0], taus):
        if t in sim:
            lo, hi, d = np.array(sim[t]).T
            ax.bar(lo, d, width=hi - lo, align="edge", color="tab:red", alpha=0.5)
        x, y = np.array(pde[t]).T
        ax.plot(x, y, color="tab:blue")
        ax.set_title(f"tau = {t:g}")
        ax.set_xlabel("w")
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_sweep(root: Path, prefix: str, out: Path) -> Path | None:
    path = root / f"{prefix}_sweep.csv"
    if not path.exists():
        return None
    rows = _read_rows(path)
    by_weight = defaultdict(lambda: defaultdict(list))
    input_only = not any(r["b_w"] for r in rows)
    for r in rows:
        if input_only:
            x = float(r["omega_x"]) if r["omega_x"] else np.nan
            series = f"b_x={r['b_x'] or 'none'}"
            panel = "input only"
        else:
            x = float(r["omega_w"]) if r["omega_w"] else np.nan
            series = f"b_x={r['b_x'] or 'none'}"
            panel = f"b={r['b_w']}"
        eps = float(r["eps_g_star"]) if r["eps_g_star"] else np.nan
        bound = float(r["eta_boundary"]) if r["eta_boundary"] else np.nan
        by_weight[panel][series].append((x, eps, bound))
    ncols = len(by_weight) + (1 if input_only else 0)
    fig, axes = plt.subplots(1, ncols, figsize=(4 * ncols, 3.2), squeeze=False)
    ax_iter = iter(axes[0])
    for panel, series in by_weight.items():
        if input_only:
            ax_b = next(ax_iter)
            for name, pts in series.items():
                x, _, b = np.array(sorted(pts)).T
                ax_b.plot(x, b, label=name)
            ax_b.axhline(2.0, ls="--", color="gray")
            ax_b.set_xlabel("omega_x")
            ax_b.set_ylabel("stability boundary")
            ax_b.legend(fontsize=7)
        ax = next(ax_iter)
        for name, pts in series.items():
            x, e, _ = np.array(sorted(pts)).T
            ax.plot(x, e, label=name)
        ax.set_title(panel)
        ax.set_xlabel("omega_x" if input_only else "omega")
        ax.set_ylabel("eps_g*")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out


def render(kind: str, figure: str | None, root: Path, results: dict) -> list[Path]:
    root = Path(root)
    prefix = figure or kind
    made = []
    for fn, name in ((plot_trajectories, "eps_g"), (plot_density, "density"), (plot_sweep, "sweep")):
        if figure == "appF" and fn is plot_trajectories:
            for panel in sorted({p.name.split("_lam")[0] for p in root.glob("appF_panel*_ode.csv")}):
                lam = next(root.glob(f"{panel}_lam*_ode.csv")).name.split("_lam")[1].split("_")[0]
                out = fn(root, f"{panel}_lam{lam}", root / f"{panel}_lam{lam}_eps_g.svg")
                if out:
                    made.append(out)
            continue
        out = fn(root, prefix, root / f"{prefix}_{name}.svg")
        if out:
            made.append(out)
    return made
