"""CSV artifacts and trajectory comparison."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import SchemaError

TRAJECTORY_HEADER = ["tau", "m", "q", "s", "m_psi", "q_psi", "r_psi", "eps_g", "eps_g_stderr"]
HISTOGRAM_HEADER = ["tau", "w_star", "bin_left", "bin_right", "density"]
DENSITY_HEADER = ["tau", "w_star", "cell_center", "density"]


def _write(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_trajectory_csv(path, columns: dict, stderr=None) -> Path:
    """``columns`` maps tau, m, q, s, m_psi, q_psi, r_psi, eps_g to equal-length arrays."""
    n = len(columns["tau"])
    err = np.zeros(n) if stderr is None or len(stderr) == 0 else np.asarray(stderr)
    rows = zip(*(np.asarray(columns[k], dtype=float) for k in TRAJECTORY_HEADER[:-1]), err)
    return _write(path, TRAJECTORY_HEADER, rows)


def simulation_columns(traj) -> tuple[dict, np.ndarray]:
    cols = {"tau": traj.tau, **traj.mean}
    return cols, traj.eps_g_stderr


def write_histogram_csv(path, histograms) -> Path:
    rows = []
    for h in histograms:
        for lo, hi, dens in zip(h.bin_edges[:-1], h.bin_edges[1:], h.densities):
            rows.append((float(h.tau), float(h.conditioning_value), float(lo), float(hi), float(dens)))
    return _write(path, HISTOGRAM_HEADER, rows)


def write_density_csv(path, snapshots) -> Path:
    rows = []
    for snap in snapshots:
        grid = snap.density
        centers = grid.centers
        for value, row in zip(grid.conditioning_values, grid.density):
            rows.extend((float(snap.tau), float(value), float(c), float(d)) for c, d in zip(centers, row))
    return _write(path, DENSITY_HEADER, rows)


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if header != TRAJECTORY_HEADER:
            raise SchemaError(f"{path}: expected header {','.join(TRAJECTORY_HEADER)}, got {','.join(header)}")
        rows = [r for r in reader if r]
    try:
        data = np.array(rows, dtype=float).reshape(-1, len(TRAJECTORY_HEADER))
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric or ragged rows") from exc
    return {k: data[:, i] for i, k in enumerate(TRAJECTORY_HEADER)}


@dataclass
class CompareReport:
    tau: np.ndarray
    diff: np.ndarray
    sup_diff: float
    tolerance: float
    passed: bool
    first_failure_tau: float | None

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = f"{status} sup|d eps_g| = {self.sup_diff:.6g} (tolerance {self.tolerance:.6g}) over {len(self.tau)} points"
        if self.first_failure_tau is not None:
            line += f"; first exceeded at tau = {self.first_failure_tau:.6g}"
        return line


def compare(path_a, path_b, tolerance: float = 0.05, interpolate: bool = False,
            stderr_factor: float = 0.0) -> CompareReport:
    """Pointwise eps_g difference of two trajectory CSVs.

    A point passes when |diff| <= max(tolerance, stderr_factor * combined stderr).
    Without ``interpolate`` the tau grids must coincide.
    """
    a = read_trajectory_csv(path_a)
    b = read_trajectory_csv(path_b)
    if interpolate:
        lo = max(a["tau"][0], b["tau"][0])
        hi = min(a["tau"][-1], b["tau"][-1])
        tau = a["tau"][(a["tau"] >= lo) & (a["tau"] <= hi)]
        eb = np.interp(tau, b["tau"], b["eps_g"])
        sb = np.interp(tau, b["tau"], b["eps_g_stderr"])
        mask = np.isin(a["tau"], tau)
        ea, sa = a["eps_g"][mask], a["eps_g_stderr"][mask]
    else:
        if a["tau"].shape != b["tau"].shape or not np.allclose(a["tau"], b["tau"], rtol=0, atol=1e-9):
            raise SchemaError("tau grids differ; pass interpolate=True to resample")
        tau, ea, eb, sa, sb = a["tau"], a["eps_g"], b["eps_g"], a["eps_g_stderr"], b["eps_g_stderr"]
    diff = ea - eb
    allowed = np.maximum(tolerance, stderr_factor * np.hypot(sa, sb))
    bad = np.abs(diff) > allowed
    first = float(tau[np.argmax(bad)]) if bad.any() else None
    sup = float(np.max(np.abs(diff))) if diff.size else 0.0
    return CompareReport(tau, diff, sup, tolerance, not bad.any(), first)


def sha256(path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def finite_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)
