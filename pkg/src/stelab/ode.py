"""Macroscopic ODEs for (m, q) under the isotropy closure.

Weight-side order parameters (m_psi, q_psi, r_psi) are evaluated in closed
form by treating each coordinate as ``z = m w*/rho + s xi`` with xi ~ N(0, 1)
and ``s = sqrt(q - m^2/rho)``.  Input-side constants (kappa, sigma^2) come from
the input quantizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import OdeDivergence
from .model import ModelConfig, generalization_error
from .quantizer import Quantizer, gauss_bivariate_term, norm_cdf, norm_pdf

S_FLOOR = 1e-10


@dataclass(frozen=True)
class TeacherMeasure:
    """Discrete law of a single teacher coordinate (atoms + weights)."""

    values: tuple
    weights: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if v.shape != w.shape or v.ndim != 1 or v.size == 0:
            raise ValueError("values and weights must be 1-D and of equal length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")

    @classmethod
    def point_mass(cls, value: float = 1.0) -> "TeacherMeasure":
        return cls((float(value),), (1.0,))

    @classmethod
    def gaussian(cls, rho: float = 1.0, mean: float = 0.0, nodes: int = 64) -> "TeacherMeasure":
        """Gauss-Hermite discretisation of N(mean, rho - mean^2)."""
        var = rho - mean * mean
        if var < 0:
            raise ValueError("need rho >= mean^2")
        x, w = np.polynomial.hermite_e.hermegauss(nodes)
        w = w / w.sum()
        vals = mean + math.sqrt(var) * x
        # rescale so the second moment is exactly rho, as the simulator does
        vals = vals * math.sqrt(rho / float(np.sum(w * vals**2)))
        return cls(tuple(vals), tuple(w))

    @property
    def atoms(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @property
    def probs(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def rho(self) -> float:
        return float(np.sum(self.probs * self.atoms**2))


@dataclass(frozen=True)
class OdeState:
    tau: float
    m: float
    q: float


@dataclass(frozen=True)
class OdeConfig:
    model: ModelConfig
    teacher_measure: TeacherMeasure = field(default_factory=TeacherMeasure.point_mass)
    noise_var: float = 0.0
    step_dtau: float = 0.01
    horizon_tau: float = 10.0
    record_stride_tau: float | None = None
    s_floor: float = S_FLOOR
    m0: float = 0.0
    q0: float = 1.0

    def __post_init__(self):
        if not (0 < self.step_dtau <= self.horizon_tau):
            raise ValueError("need 0 < step_dtau <= horizon_tau")


def _z(m: float, s: float, grid: Quantizer, measure: TeacherMeasure, T: float):
    """Standardised distances (threshold k, atom j) and the effective scale."""
    scale = math.hypot(s, T) if T > 0 else max(s, S_FLOOR)
    centre = m * measure.atoms / measure.rho
    return (centre[None, :] - grid.thresholds[:, None]) / scale, scale


def m_psi_iso(m: float, s: float, grid_w: Quantizer, measure: TeacherMeasure, T: float = 0.0) -> float:
    if grid_w.is_identity:
        return float(m * np.sum(measure.probs * measure.atoms**2) / measure.rho)
    z, _ = _z(m, s, grid_w, measure, T)
    inner = -grid_w.omega + grid_w.step * norm_cdf(z).sum(axis=0)
    return float(np.sum(measure.probs * measure.atoms * inner))


def q_psi_iso(m: float, s: float, grid_w: Quantizer, measure: TeacherMeasure, T: float = 0.0) -> float:
    if grid_w.is_identity:
        return float(m * m / measure.rho + s * s)
    v = grid_w.levels
    if T == 0:
        z, _ = _z(m, s, grid_w, measure, 0.0)
        inner = v[0] ** 2 + (np.diff(v**2)[:, None] * norm_cdf(z)).sum(axis=0)
        return float(np.sum(measure.probs * inner))
    # E[psi_T(z)^2] = omega^2 - 2 omega delta sum_k E[Phi_k] + delta^2 sum_ij E[Phi_i Phi_j]
    om, dl, th = grid_w.omega, grid_w.step, grid_w.thresholds
    total = 0.0
    for a, p in zip(measure.atoms, measure.probs):
        c = m * a / measure.rho
        single = sum(norm_cdf((c - t) / math.hypot(s, T)) for t in th)
        pair = 0.0
        for i in range(len(th)):
            pair += gauss_bivariate_term(c, s, th[i], th[i], T)
            for j in range(i + 1, len(th)):
                pair += 2.0 * gauss_bivariate_term(c, s, th[i], th[j], T)
        total += p * (om * om - 2.0 * om * dl * single + dl * dl * pair)
    return float(total)


def r_psi_iso(m: float, s: float, grid_w: Quantizer, measure: TeacherMeasure, T: float = 0.0) -> float:
    if grid_w.is_identity:
        return q_psi_iso(m, s, grid_w, measure)
    z, scale = _z(m, s, grid_w, measure, T)
    spread = s * s / scale * float(np.sum(measure.probs * norm_pdf(z).sum(axis=0)))
    return m * m_psi_iso(m, s, grid_w, measure, T) / measure.rho + grid_w.step * spread


def weight_order_params(m: float, s: float, grid_w: Quantizer, measure: TeacherMeasure, T: float = 0.0):
    """(m_psi, q_psi, r_psi) with the shared z-grid computed once on the T = 0 path."""
    if grid_w.is_identity or T > 0:
        return (
            m_psi_iso(m, s, grid_w, measure, T),
            q_psi_iso(m, s, grid_w, measure, T),
            r_psi_iso(m, s, grid_w, measure, T),
        )
    s_eff = max(s, S_FLOOR)
    z = (m * measure.atoms[None, :] / measure.rho - grid_w.thresholds[:, None]) / s_eff
    cdf = norm_cdf(z)
    pdf = norm_pdf(z)
    p, a, v = measure.probs, measure.atoms, grid_w.levels
    m_psi = float(np.sum(p * a * (-grid_w.omega + grid_w.step * cdf.sum(axis=0))))
    q_psi = float(np.sum(p * (v[0] ** 2 + (np.diff(v**2)[:, None] * cdf).sum(axis=0))))
    r_psi = m * m_psi / measure.rho + grid_w.step * s * float(np.sum(p * pdf.sum(axis=0)))
    return m_psi, q_psi, r_psi


def spread_of(m: float, q: float, rho: float, s_floor: float = S_FLOOR) -> float:
    """s = sqrt(q - m^2/rho), clamped at ``s_floor``."""
    return math.sqrt(max(q - m * m / rho, s_floor * s_floor))


def ode_rhs(state: OdeState, config: OdeConfig) -> tuple[float, float]:
    dm, dq, _ = _rhs_full(state.m, state.q, config)
    return dm, dq


@njit(cache=True)
def _rhs_core(m, q, thresholds, levels, omega, delta, atoms, probs, rho, identity,
              kappa, sig2, lam, eta, noise_var, s_floor):
    s = math.sqrt(max(q - m * m / rho, s_floor * s_floor))
    if identity:
        m_psi = m
        q_psi = m * m / rho + s * s
        r_psi = q_psi
    else:
        m_psi = 0.0
        q_psi = 0.0
        spread = 0.0
        for j in range(atoms.size):
            centre = m * atoms[j] / rho
            cdf_sum = 0.0
            sq = levels[0] * levels[0]
            for k in range(thresholds.size):
                z = (centre - thresholds[k]) / s
                c = 0.5 * math.erfc(-z * 0.7071067811865476)
                cdf_sum += c
                sq += (levels[k + 1] * levels[k + 1] - levels[k] * levels[k]) * c
                spread += probs[j] * 0.3989422804014327 * math.exp(-0.5 * z * z)
            m_psi += probs[j] * atoms[j] * (-omega + delta * cdf_sum)
            q_psi += probs[j] * sq
        r_psi = m * m_psi / rho + delta * s * spread
    eps = sig2 * q_psi - 2.0 * kappa * m_psi + rho + noise_var
    gain = sig2 + lam
    dm = -eta * (gain * m_psi - kappa * rho)
    dq = -2.0 * eta * (gain * r_psi - kappa * m) + eta * eta * sig2 * eps
    return dm, dq, s, m_psi, q_psi, r_psi, eps


_EMPTY = np.zeros(0)


def _core_args(config: OdeConfig):
    model = config.model
    wq = model.weight_quantizer
    mom = model.input_moments
    meas = config.teacher_measure
    if wq.is_identity:
        th, lv, om, dl = _EMPTY, _EMPTY, 0.0, 0.0
    else:
        th, lv, om, dl = np.asarray(wq.thresholds), np.asarray(wq.levels), wq.omega, wq.step
    return (th, lv, om, dl, meas.atoms, meas.probs, meas.rho, wq.is_identity,
            mom.kappa, mom.sigma_sq, model.ridge, model.learning_rate, config.noise_var, config.s_floor)


def _rhs_full(m: float, q: float, config: OdeConfig):
    if config.model.weight_quantizer.temperature == 0:
        dm, dq, s, mp, qp, rp, eps = _rhs_core(m, q, *_core_args(config))
        return dm, dq, (s, mp, qp, rp, eps)
    return _rhs_reference(m, q, config)


def _rhs_reference(m: float, q: float, config: OdeConfig):
    """Pure-numpy right-hand side; also the only path for T > 0."""
    model = config.model
    mom = model.input_moments
    rho = config.teacher_measure.rho
    lam, eta = model.ridge, model.learning_rate
    s = spread_of(m, q, rho, config.s_floor)
    wq = model.weight_quantizer
    m_psi, q_psi, r_psi = weight_order_params(m, s, wq, config.teacher_measure, wq.temperature)
    eps = generalization_error(mom, m_psi, q_psi, rho, config.noise_var)
    gain = mom.sigma_sq + lam
    dm = -eta * (gain * m_psi - mom.kappa * rho)
    dq = -2.0 * eta * (gain * r_psi - mom.kappa * m) + eta * eta * mom.sigma_sq * eps
    return dm, dq, (s, m_psi, q_psi, r_psi, eps)


def rhs_in_spread(m: float, s: float, config: OdeConfig) -> tuple[float, float]:
    """(dm/dtau, dq/dtau) with the state given as (m, s) instead of (m, q).

    Avoids forming q - m^2/rho, which loses all precision when s is tiny.
    """
    model = config.model
    mom = model.input_moments
    rho = config.teacher_measure.rho
    wq = model.weight_quantizer
    m_psi, q_psi, r_psi = weight_order_params(m, s, wq, config.teacher_measure, wq.temperature)
    eps = generalization_error(mom, m_psi, q_psi, rho, config.noise_var)
    gain = mom.sigma_sq + model.ridge
    eta = model.learning_rate
    dm = -eta * (gain * m_psi - mom.kappa * rho)
    # gain * m * m_psi / rho - kappa * m, written so it is exactly 0 at m_psi = c
    spread = r_psi - m * m_psi / rho
    dq = -2.0 * eta * (gain * spread + m * (gain * m_psi / rho - mom.kappa)) + eta * eta * mom.sigma_sq * eps
    return dm, dq


@dataclass
class OdeResult:
    """Recorded states plus the derived weight-side observables."""

    tau: np.ndarray
    m: np.ndarray
    q: np.ndarray
    s: np.ndarray
    m_psi: np.ndarray
    q_psi: np.ndarray
    r_psi: np.ndarray
    eps_g: np.ndarray

    @property
    def states(self) -> list[OdeState]:
        return [OdeState(float(t), float(a), float(b)) for t, a, b in zip(self.tau, self.m, self.q)]

    def columns(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("tau", "m", "q", "s", "m_psi", "q_psi", "r_psi", "eps_g")}


def _rk4(m: float, q: float, h: float, config: OdeConfig, core=None):
    if core is None:
        f = lambda a, b: _rhs_full(a, b, config)[:2]  # noqa: E731
    else:
        f = lambda a, b: _rhs_core(a, b, *core)[:2]  # noqa: E731
    k1m, k1q = f(m, q)
    k2m, k2q = f(m + 0.5 * h * k1m, q + 0.5 * h * k1q)
    k3m, k3q = f(m + 0.5 * h * k2m, q + 0.5 * h * k2q)
    k4m, k4q = f(m + h * k3m, q + h * k3q)
    m_new = m + h / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m)
    q_new = q + h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
    return m_new, q_new


def integrate(config: OdeConfig, record_taus=None, q_limit: float = math.inf) -> OdeResult:
    """Fixed-step classic RK4 from (m0, q0).

    States are recorded at multiples of ``record_stride_tau`` (default: every
    step) or at the explicit ``record_taus``; the step is shortened to land on
    each record time exactly.  ``q_limit`` stops integration early (used to
    detect blow-up without overflowing).
    """
    rho = config.teacher_measure.rho
    h = config.step_dtau
    if record_taus is None:
        stride = config.record_stride_tau or h
        n_rec = int(math.floor(config.horizon_tau / stride + 1e-9))
        record_taus = stride * np.arange(n_rec + 1)
    record_taus = np.asarray(record_taus, dtype=float)

    rows = []
    m, q, tau = config.m0, config.q0, 0.0
    core = _core_args(config) if config.model.weight_quantizer.temperature == 0 else None

    def record(t, m, q):
        _, _, (s, mp, qp, rp, eps) = _rhs_full(m, q, config)
        rows.append((t, m, q, s, mp, qp, rp, eps))

    def as_result():
        arr = np.array(rows, dtype=float).reshape(-1, 8)
        return OdeResult(*arr.T)

    for target in record_taus:
        while tau < target - 1e-12 * max(1.0, target):
            step = min(h, target - tau)
            # avoid a sliver step caused by round-off
            if target - (tau + step) < 1e-9 * h:
                step = target - tau
            m, q = _rk4(m, q, step, config, core)
            tau = tau + step
            if not (math.isfinite(m) and math.isfinite(q)):
                raise OdeDivergence(f"non-finite state at tau={tau:g}", tau, as_result())
            if q > q_limit:
                raise OdeDivergence(f"q exceeded {q_limit:g} at tau={tau:g}", tau, as_result())
            # q below m^2/rho only through round-off; clamp back onto the boundary
            if q < m * m / rho:
                q = m * m / rho + config.s_floor**2
        tau = float(target)
        record(tau, m, q)
    return as_result()
