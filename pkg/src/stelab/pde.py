"""Finite-volume solver for the self-consistent Fokker-Planck equation
of the coordinate density conditioned on the teacher value.

Each conditional density mu(w | w*) evolves under

    d mu / d tau = -d/dw [a(w; w*) mu] + D(tau) d^2 mu / dw^2,
    a(w; w*) = eta (kappa w* - (sigma^2 + lambda) psi(w)),
    D(tau)   = (eta^2 / 2) sigma^2 eps_g(tau),

where kappa, sigma^2 are the input quantizer's moments, psi is the weight
quantizer and eps_g is computed from the current densities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CflError
from .model import ModelConfig, generalization_error
from .quantizer import Quantizer, norm_cdf, quantize

log = logging.getLogger(__name__)


@dataclass
class DensityGrid:
    """Piecewise-constant densities on ``cells`` equal cells of [w_min, w_max].

    ``density`` has one row per conditioning value.
    """

    w_min: float
    w_max: float
    cells: int
    conditioning_values: np.ndarray
    weights: np.ndarray
    density: np.ndarray
    tau: float = 0.0

    def __post_init__(self):
        if not self.w_max > self.w_min:
            raise ValueError("need w_max > w_min")
        self.conditioning_values = np.atleast_1d(np.asarray(self.conditioning_values, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        self.density = np.atleast_2d(np.asarray(self.density, dtype=float))
        if self.density.shape != (self.conditioning_values.size, self.cells):
            raise ValueError("density must have shape (n_values, cells)")
        if self.weights.shape != self.conditioning_values.shape or np.any(self.weights < 0):
            raise ValueError("weights must be non-negative, one per conditioning value")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")

    @property
    def cell_width(self) -> float:
        return (self.w_max - self.w_min) / self.cells

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.w_min, self.w_max, self.cells + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[1:] + e[:-1])

    def masses(self) -> np.ndarray:
        return self.density.sum(axis=1) * self.cell_width

    def mean(self) -> np.ndarray:
        """Mean of each conditional density."""
        return (self.density * self.centers).sum(axis=1) * self.cell_width

    def copy(self) -> "DensityGrid":
        return DensityGrid(self.w_min, self.w_max, self.cells, self.conditioning_values.copy(),
                           self.weights.copy(), self.density.copy(), self.tau)

    @classmethod
    def gaussian(cls, mean: float, std: float, w_min: float, w_max: float, cells: int,
                 conditioning_values=(1.0,), weights=(1.0,)) -> "DensityGrid":
        """Cell averages of N(mean, std^2), renormalized to unit mass on the grid."""
        edges = np.linspace(w_min, w_max, cells + 1)
        cdf = norm_cdf((edges - mean) / std)
        row = np.diff(cdf)
        row = row / (row.sum() * (edges[1] - edges[0]))
        n = len(np.atleast_1d(conditioning_values))
        return cls(w_min, w_max, cells, conditioning_values, weights, np.tile(row, (n, 1)))


@dataclass(frozen=True)
class PdeConfig:
    model: ModelConfig
    conditioning_values: tuple = (1.0,)
    weights: tuple = (1.0,)
    noise_var: float = 0.0
    drift_temperature: float = 0.0
    dt: float | None = None  # None: largest stable step times cfl_safety
    cfl_safety: float = 0.9
    horizon_tau: float = 100.0
    record_taus: tuple = (0.0,)
    w_min: float | None = None
    w_max: float | None = None
    cells: int = 400
    init_mean: float = 0.0
    init_std: float = 1.0

    def __post_init__(self):
        if self.cells < 3:
            raise ValueError("need at least 3 cells")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.drift_temperature < 0:
            raise ValueError("drift_temperature must be >= 0")

    def domain(self) -> tuple[float, float]:
        omega = self.model.weight_quantizer.omega
        half = (omega if math.isfinite(omega) else 1.0) + 4.0
        lo = -half if self.w_min is None else self.w_min
        hi = half if self.w_max is None else self.w_max
        return lo, hi

    @property
    def rho(self) -> float:
        v = np.asarray(self.conditioning_values, dtype=float)
        return float(np.dot(self.weights, v * v))

    def initial_density(self) -> DensityGrid:
        lo, hi = self.domain()
        return DensityGrid.gaussian(self.init_mean, self.init_std, lo, hi, self.cells,
                                    self.conditioning_values, self.weights)


def _antiderivative_psi(grid: Quantizer, x: np.ndarray, power: int) -> np.ndarray:
    """Exact antiderivative of psi(x)^power for the hard quantizer, anchored at 0.

    Uses psi^p = v_0^p + sum_k (v_k^p - v_{k-1}^p) step(x - theta_k).
    """
    x = np.asarray(x, dtype=float)
    if grid.is_identity:
        return x ** (power + 1) / (power + 1)
    lp = np.asarray(grid.levels) ** power
    th = np.asarray(grid.thresholds)
    jumps = np.diff(lp)
    ramps = np.maximum(x[..., None] - th, 0.0) - np.maximum(-th, 0.0)
    return lp[0] * x + ramps @ jumps


def cell_averages(grid: Quantizer, edges: np.ndarray, temperature: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Cell averages of psi and psi^2.

    Exact for the hard quantizer (piecewise-constant integrand); the smoothed
    quantizer uses the cell midpoint.
    """
    h = np.diff(edges)
    if temperature > 0 and not grid.is_identity:
        c = 0.5 * (edges[1:] + edges[:-1])
        p = quantize(grid, c, temperature)
        return p, p * p
    F1 = _antiderivative_psi(grid, edges, 1)
    F2 = _antiderivative_psi(grid, edges, 2)
    return np.diff(F1) / h, np.diff(F2) / h


@dataclass
class PdeCoefficients:
    drift: np.ndarray  # (n_values, cells)
    diffusion: float
    m_psi: float
    q_psi: float
    eps_g: float


def _order_params(density: DensityGrid, psi_bar: np.ndarray, psi2_bar: np.ndarray) -> tuple[float, float]:
    h = density.cell_width
    per_value_m = density.density @ psi_bar * h
    per_value_q = density.density @ psi2_bar * h
    m_psi = float(np.dot(density.weights, density.conditioning_values * per_value_m))
    q_psi = float(np.dot(density.weights, per_value_q))
    return m_psi, q_psi


class _Tables:
    """Per-grid cached cell averages of psi."""

    def __init__(self, density: DensityGrid, config: PdeConfig):
        wq = config.model.weight_quantizer
        self.psi_bar, self.psi2_bar = cell_averages(wq, density.edges, 0.0)
        if config.drift_temperature > 0:
            self.drift_psi, _ = cell_averages(wq, density.edges, config.drift_temperature)
        else:
            self.drift_psi = self.psi_bar


def _coefficients(density: DensityGrid, config: PdeConfig, tables: _Tables) -> PdeCoefficients:
    model = config.model
    mx = model.input_moments
    eta, lam = model.learning_rate, model.ridge
    m_psi, q_psi = _order_params(density, tables.psi_bar, tables.psi2_bar)
    eps = generalization_error(mx, m_psi, q_psi, config.rho, config.noise_var)
    drift = eta * (mx.kappa * density.conditioning_values[:, None] - (mx.sigma_sq + lam) * tables.drift_psi[None, :])
    diffusion = 0.5 * eta * eta * mx.sigma_sq * max(eps, 0.0)
    return PdeCoefficients(drift, diffusion, m_psi, q_psi, eps)


def pde_coefficients(density: DensityGrid, config: PdeConfig) -> PdeCoefficients:
    """Drift per cell and the scalar diffusion, closed self-consistently through eps_g."""
    return _coefficients(density, config, _Tables(density, config))


def max_stable_dt(drift: np.ndarray, diffusion: float, h: float) -> float:
    """Largest dt keeping every cell's outflow fraction at most 1 (positivity)."""
    rate = np.abs(drift).max() / h + 2.0 * diffusion / (h * h)
    return math.inf if rate == 0 else 1.0 / rate


def _advance(mu: np.ndarray, drift: np.ndarray, diffusion: float, h: float, dt: float) -> np.ndarray:
    """One explicit step: donor-cell advection with cell velocities, central diffusion, no-flux walls."""
    ap = np.maximum(drift, 0.0)
    am = np.minimum(drift, 0.0)
    # flux through the interior faces between cell j and j+1
    flux = ap[:, :-1] * mu[:, :-1] + am[:, 1:] * mu[:, 1:]
    flux -= diffusion * (mu[:, 1:] - mu[:, :-1]) / h
    div = np.zeros_like(mu)
    div[:, :-1] += flux
    div[:, 1:] -= flux
    return mu - dt / h * div


def _clamp(mu: np.ndarray, h: float) -> np.ndarray:
    neg = mu < 0
    if np.any(neg):
        lost = float(-mu[neg].sum() * h)
        if lost > 1e-14:
            log.info("clamped negative density, mass change %.3e", lost)
        mu = np.where(neg, 0.0, mu)
    return mu


def pde_step(density: DensityGrid, config: PdeConfig, dt: float | None = None) -> DensityGrid:
    """Advance by one explicit step of size ``dt`` (default ``config.dt``)."""
    dt = config.dt if dt is None else dt
    if dt is None:
        raise ValueError("pde_step needs a step size")
    co = pde_coefficients(density, config)
    h = density.cell_width
    limit = max_stable_dt(co.drift, co.diffusion, h)
    if dt > limit * (1 + 1e-12):
        raise CflError(f"dt={dt:.3e} exceeds stability limit {limit:.3e}", config.cfl_safety * limit)
    out = density.copy()
    out.density = _clamp(_advance(density.density, co.drift, co.diffusion, h, dt), h)
    out.tau = density.tau + dt
    return out


@dataclass
class PdeSnapshot:
    tau: float
    density: DensityGrid
    m_psi: float
    q_psi: float
    eps_g: float


@dataclass
class PdeResult:
    snapshots: list = field(default_factory=list)
    steps: int = 0

    @property
    def tau(self) -> np.ndarray:
        return np.array([s.tau for s in self.snapshots])

    @property
    def eps_g(self) -> np.ndarray:
        return np.array([s.eps_g for s in self.snapshots])


def solve_pde(config: PdeConfig, initial: DensityGrid | None = None) -> PdeResult:
    """Evolve to ``horizon_tau`` and keep snapshots at ``record_taus``.

    With ``config.dt = None`` the step adapts to the current coefficients;
    a fixed ``dt`` is checked against the stability limit at every step.
    Steps are shortened so that each record time is hit exactly.
    """
    density = (initial or config.initial_density()).copy()
    density.tau = 0.0
    tables = _Tables(density, config)
    h = density.cell_width
    records = sorted(set(float(t) for t in config.record_taus if 0 <= t <= config.horizon_tau))
    result = PdeResult()

    def snap(dens, co):
        result.snapshots.append(PdeSnapshot(dens.tau, dens.copy(), co.m_psi, co.q_psi, co.eps_g))

    mu = density.density
    tau = 0.0
    co = _coefficients(density, config, tables)
    pending = list(records)
    if pending and pending[0] == 0.0:
        snap(density, co)
        pending.pop(0)
    while pending:
        limit = max_stable_dt(co.drift, co.diffusion, h)
        if config.dt is None:
            dt = config.cfl_safety * limit
        else:
            dt = config.dt
            if dt > limit * (1 + 1e-12):
                raise CflError(f"dt={dt:.3e} exceeds stability limit {limit:.3e} at tau={tau:.4g}",
                               config.cfl_safety * limit)
        target = pending[0]
        last = tau + dt >= target - 1e-12
        if last:
            dt = target - tau
        mu = _clamp(_advance(mu, co.drift, co.diffusion, h, dt), h)
        tau = target if last else tau + dt
        result.steps += 1
        density.density = mu
        density.tau = tau
        co = _coefficients(density, config, tables)
        if last:
            snap(density, co)
            pending.pop(0)
    return result


def bin_masses(density: DensityGrid, edges: np.ndarray) -> np.ndarray:
    """Mass of each conditional density inside each bin (exact for piecewise-constant cells)."""
    cell_edges = density.edges
    cum = np.concatenate([np.zeros((density.density.shape[0], 1)),
                          np.cumsum(density.density * density.cell_width, axis=1)], axis=1)
    out = np.empty((density.density.shape[0], len(edges)))
    for r in range(density.density.shape[0]):
        out[r] = np.interp(edges, cell_edges, cum[r])
    return np.diff(out, axis=1)
