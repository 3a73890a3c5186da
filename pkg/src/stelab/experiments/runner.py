"""Wire configs to engines, write CSV artifacts and the run manifest."""

from __future__ import annotations

import copy
import itertools
import json
import logging
import math
import platform
import subprocess
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import DivergenceError, NoFixedPointFound, OdeDivergence
from ..fixed_point import (
    FixedPointReport,
    input_only_fixed_point,
    joint_fixed_point,
    sweep_row,
    write_sweep_csv,
)
from ..ode import integrate
from ..pde import solve_pde
from ..simulator import run_simulation
from . import io
from .config import ExperimentConfig, build_measure, build_model, build_ode, build_pde, build_sim, deep_merge

log = logging.getLogger(__name__)


@dataclass
class RunManifest:
    config: dict
    version: str
    git: str | None
    seed: int
    started_utc: str
    wall_clock_s: float = 0.0
    status: str = "ok"  # ok | diverged
    outputs: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    python: str = platform.python_version()

    def add(self, path: Path, root: Path) -> Path:
        self.outputs[str(path.relative_to(root))] = io.sha256(path)
        return path

    def write(self, root: Path) -> Path:
        path = root / "manifest.json"
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=_json_default)
        return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _git_stamp() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


class RunFailed(Exception):
    """An engine aborted; ``manifest`` still lists the partial artifacts."""

    def __init__(self, message: str, manifest: RunManifest, exit_code: int):
        super().__init__(message)
        self.manifest = manifest
        self.exit_code = exit_code


# --- single-engine runs -------------------------------------------------------------


def run_simulate(cfg: dict, root: Path, tag: str, manifest: RunManifest):
    sim = build_sim(cfg)
    try:
        traj = run_simulation(sim)
    except DivergenceError as exc:
        if exc.partial is not None:
            tau, rows, _ = exc.partial
            cols = {"tau": tau, **{k: rows[:, i] for i, k in enumerate(io.TRAJECTORY_HEADER[1:-1])}}
            manifest.add(io.write_trajectory_csv(root / f"{tag}_sim_partial.csv", cols), root)
        manifest.status = "diverged"
        manifest.notes.append(f"{tag}: {exc}")
        raise
    cols, err = io.simulation_columns(traj)
    manifest.add(io.write_trajectory_csv(root / f"{tag}_sim.csv", cols, err), root)
    if traj.histograms:
        manifest.add(io.write_histogram_csv(root / f"{tag}_hist.csv", traj.histograms), root)
    return traj


def run_ode(cfg: dict, root: Path, tag: str, manifest: RunManifest):
    ode = build_ode(cfg)
    try:
        res = integrate(ode, q_limit=1e12)
    except OdeDivergence as exc:
        if exc.partial is not None:
            manifest.add(io.write_trajectory_csv(root / f"{tag}_ode_partial.csv", exc.partial.columns()), root)
        manifest.status = "diverged"
        manifest.notes.append(f"{tag}: {exc}")
        raise
    manifest.add(io.write_trajectory_csv(root / f"{tag}_ode.csv", res.columns()), root)
    return res


def run_pde(cfg: dict, root: Path, tag: str, manifest: RunManifest):
    res = solve_pde(build_pde(cfg))
    manifest.add(io.write_density_csv(root / f"{tag}_density.csv", res.snapshots), root)
    rows = {"tau": res.tau, "eps_g": res.eps_g,
            "m_psi": np.array([s.m_psi for s in res.snapshots]),
            "q_psi": np.array([s.q_psi for s in res.snapshots])}
    path = root / f"{tag}_pde_observables.csv"
    with open(path, "w") as fh:
        fh.write("tau,m_psi,q_psi,eps_g\n")
        for t, mp, qp, e in zip(rows["tau"], rows["m_psi"], rows["q_psi"], rows["eps_g"]):
            fh.write(f"{t!r},{mp!r},{qp!r},{e!r}\n")
    manifest.add(path, root)
    return res


def fixed_point_for(cfg: dict) -> FixedPointReport:
    model = build_model(cfg)
    noise = float(cfg["teacher"].get("noise_var", 0.0))
    measure = build_measure(cfg)
    if model.weight_quantizer.is_identity:
        return input_only_fixed_point(model.input_moments, measure.rho, noise, model.ridge, model.learning_rate)
    try:
        return joint_fixed_point(model, measure, noise, cfg["fixedpoint"].get("variant", "appendix"))
    except NoFixedPointFound as exc:
        log.warning("%s", exc)
        nan = math.nan
        return FixedPointReport("Joint", nan, nan, nan, nan, None, None, "None")


def run_fixedpoint(cfg: dict, root: Path, tag: str, manifest: RunManifest):
    rep = fixed_point_for(cfg)
    path = root / f"{tag}_fixedpoint.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(path, [sweep_row(build_model(cfg), rep)])
    manifest.add(path, root)
    return rep


def _with_quantizers(cfg: dict, b_w, omega_w, b_x, omega_x, eta, lam) -> dict:
    out = copy.deepcopy(cfg)
    m = out["model"]
    m["weight"] = None if b_w is None else {"bits": int(b_w), "omega": float(omega_w)}
    m["input"] = None if b_x is None else {"bits": int(b_x), "omega": float(omega_x)}
    m["eta"], m["ridge"] = float(eta), float(lam)
    return out


def run_sweep(cfg: dict, root: Path, tag: str, manifest: RunManifest):
    sw = cfg["sweep"]
    rows, reports = [], []
    for b_w, om_w, b_x, om_x, eta, lam in itertools.product(sw["b_w"], sw["omega_w"], sw["b_x"], sw["omega_x"],
                                                            sw["eta"], sw["lambda"]):
        if b_w is None and om_w != sw["omega_w"][0]:
            continue  # the range is irrelevant for real-valued weights
        if b_x is None and om_x != sw["omega_x"][0]:
            continue
        point = _with_quantizers(cfg, b_w, om_w, b_x, om_x, eta, lam)
        rep = fixed_point_for(point)
        rows.append(sweep_row(build_model(point), rep))
        reports.append(((b_w, om_w, b_x, om_x, eta, lam), rep))
    path = root / f"{tag}_sweep.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(path, rows)
    manifest.add(path, root)
    return reports


# --- presets ---------------------------------------------------------------------------


def _series_points(cfg: dict, series: dict) -> list[tuple[str, dict]]:
    """Expand a {b_w, omega_w, b_x} series spec into tagged configs."""
    base_w = cfg["model"]["weight"] or {"bits": 2, "omega": 1.0}
    base_x = cfg["model"]["input"]
    b_ws = series.get("b_w", [base_w["bits"]])
    om_ws = series.get("omega_w", [base_w["omega"]])
    b_xs = series.get("b_x", [None if base_x is None else base_x["bits"]])
    om_x = 1.0 if base_x is None else base_x["omega"]
    points = []
    for b_w, om_w, b_x in itertools.product(b_ws, om_ws, b_xs):
        point = _with_quantizers(cfg, b_w, om_w, b_x, om_x, cfg["model"]["eta"], cfg["model"]["ridge"])
        tag = f"bw{b_w}_ow{om_w:g}_bx{'none' if b_x is None else b_x}"
        points.append((tag, point))
    return points


def _reproduce(ec: ExperimentConfig, cfg: dict, root: Path, manifest: RunManifest) -> dict:
    preset = cfg.get("preset", {})
    engines = preset.get("engines", [])
    fig = ec.figure
    results: dict = {}
    if fig == "fig1":
        results["sim"] = run_simulate(cfg, root, fig, manifest)
        results["pde"] = run_pde(cfg, root, fig, manifest)
        return results
    if fig in ("fig5", "fig6"):
        results["sweep"] = run_sweep(cfg, root, fig, manifest)
        if "simulate" in engines:
            sims = {}
            sw = cfg["sweep"]
            for b_w, b_x, om in itertools.product(sw["b_w"], sw["b_x"], preset.get("sim_omega_w", [])):
                point = _with_quantizers(cfg, b_w, om, b_x, sw["omega_x"][0], sw["eta"][0], sw["lambda"][0])
                tag = f"{fig}_bw{b_w}_ow{om:g}_bx{'none' if b_x is None else b_x}"
                sims[(b_w, b_x, om)] = run_simulate(point, root, tag, manifest)
            results["sims"] = sims
        return results
    panels = preset.get("panels") or [{"lambda": cfg["model"]["ridge"], "series": preset.get("series", {})}]
    for i, panel in enumerate(panels):
        panel_cfg = copy.deepcopy(cfg)
        panel_cfg["model"]["ridge"] = float(panel["lambda"])
        prefix = fig if len(panels) == 1 else f"{fig}_panel{i}_lam{panel['lambda']:g}"
        for tag, point in _series_points(panel_cfg, panel["series"]):
            entry = {}
            if "ode" in engines:
                entry["ode"] = run_ode(point, root, f"{prefix}_{tag}", manifest)
            if "simulate" in engines:
                entry["sim"] = run_simulate(point, root, f"{prefix}_{tag}", manifest)
            results[f"{prefix}_{tag}"] = entry
    return results


def run(ec: ExperimentConfig) -> tuple[RunManifest, dict]:
    """Execute one experiment; the manifest is written last, also on failure."""
    root = Path(ec.out)
    root.mkdir(parents=True, exist_ok=True)
    cfg = copy.deepcopy(ec.values)
    manifest = RunManifest(cfg, __version__, _git_stamp(), ec.seed,
                           datetime.now(timezone.utc).isoformat(timespec="seconds"))
    t0 = time.perf_counter()
    results: dict = {}
    try:
        if ec.kind == "simulate":
            results["sim"] = run_simulate(cfg, root, "simulate", manifest)
        elif ec.kind == "ode":
            results["ode"] = run_ode(cfg, root, "ode", manifest)
        elif ec.kind == "pde":
            results["pde"] = run_pde(cfg, root, "pde", manifest)
        elif ec.kind == "fixedpoint":
            results["fixedpoint"] = run_fixedpoint(cfg, root, "fixedpoint", manifest)
        elif ec.kind == "sweep":
            results["sweep"] = run_sweep(cfg, root, "sweep", manifest)
        else:
            results = _reproduce(ec, cfg, root, manifest)
        if ec.plot:
            from . import plots

            for path in plots.render(ec.kind, ec.figure, root, results):
                manifest.add(path, root)
    except (DivergenceError, OdeDivergence) as exc:
        manifest.wall_clock_s = time.perf_counter() - t0
        manifest.write(root)
        raise RunFailed(str(exc), manifest, 3) from exc
    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.write(root)
    return manifest, results


def preset_config(figure: str, overrides: dict | None = None) -> dict:
    from .config import DEFAULTS
    from .presets import get_preset

    cfg = deep_merge(DEFAULTS, get_preset(figure))
    cfg["kind"], cfg["figure"] = "reproduce", figure
    return deep_merge(cfg, overrides or {})
