"""Stationary points of the macroscopic ODEs, their stability and small-eta limits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import NoFixedPointFound, NoInteriorSolution
from .model import ModelConfig
from .ode import OdeConfig, TeacherMeasure, rhs_in_spread
from .quantizer import Quantizer, QuantizerMoments, norm_cdf, norm_pdf

STABLE = "AsymptoticallyStable"
MARGINAL = "MarginallyStable"
UNSTABLE = "Unstable"
NO_STABILITY = "None"

INTERIOR = "Interior01"
BOUNDARY = "Boundary"
SATURATED = "Saturated"

VARIANTS = ("appendix", "main_text")


@dataclass
class LevelPosition:
    c: float
    i_star: int
    p: float
    delta: float
    regime: str


@dataclass
class FixedPointReport:
    kind: str  # "InputOnly" | "Joint"
    m_star: float
    q_star: float
    s_star: float
    eps_g_star: float
    jacobian: np.ndarray | None
    eigenvalues: np.ndarray | None
    stability: str
    eta_boundary: float | None = None
    regime: str | None = None
    residuals: dict = field(default_factory=dict)


def classify(eigenvalues, scale: float = 1.0, tol: float = 1e-9) -> str:
    """Verdict from the largest real part, with ``tol`` relative to ``scale``."""
    top = float(np.max(np.real(eigenvalues)))
    slack = tol * max(scale, 1e-300)
    if top < -slack:
        return STABLE
    if top <= slack:
        return MARGINAL
    return UNSTABLE


# --- input-only quantization --------------------------------------------------


def input_only_fixed_point(moments_x: QuantizerMoments, rho: float, noise_var: float,
                           lam: float, eta: float) -> FixedPointReport:
    """Closed-form stationary point with real-valued weights."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    k, s2 = moments_x.kappa, moments_x.sigma_sq
    gain = s2 + lam
    boundary = 2.0 * gain / (s2 * s2)
    m = rho * k / gain
    jac = np.array([
        [-eta * gain, 0.0],
        [2.0 * eta * k - 2.0 * eta * eta * s2 * k, -2.0 * eta * gain + eta * eta * s2 * s2],
    ])
    eig = np.array([jac[0, 0], jac[1, 1]], dtype=complex)
    denom = gain * (2.0 * gain - eta * s2 * s2)
    if denom <= 0:
        return FixedPointReport("InputOnly", m, math.nan, math.nan, math.nan, jac, eig,
                                NO_STABILITY, boundary)
    q = (2.0 * k * k * rho + eta * s2 * ((rho + noise_var) * gain - 2.0 * k * k * rho)) / denom
    eps = rho + noise_var + s2 * q - 2.0 * k * m
    s = math.sqrt(max(q - m * m / rho, 0.0))
    return FixedPointReport("InputOnly", m, q, s, eps, jac, eig,
                            classify(eig, float(np.abs(jac).max())), boundary)


# --- joint quantization ---------------------------------------------------------


def target_value(model: ModelConfig, rho: float) -> float:
    """c = rho kappa / (sigma^2 + lambda), the stationary value of m_psi."""
    mx = model.input_moments
    return rho * mx.kappa / (mx.sigma_sq + model.ridge)


def level_position(c: float, grid_w: Quantizer, tol: float = 1e-12) -> LevelPosition:
    """Locate c between neighbouring weight levels."""
    if grid_w.is_identity:
        raise ValueError("level position needs a quantized weight grid")
    omega, delta, L = grid_w.omega, grid_w.step, grid_w.level_count_minus_one
    if abs(c) >= omega:
        i = L - 1 if c > 0 else 0
        return LevelPosition(c, i, 1.0 if c > 0 else 0.0, delta, SATURATED)
    x = (c + omega) / delta
    i = min(int(math.floor(x)), L - 1)
    p = x - i
    if abs(p) <= tol or abs(p - round(p)) <= tol:
        p = float(round(p))
        regime = BOUNDARY
    else:
        regime = INTERIOR
    return LevelPosition(c, i, p, delta, regime)


def _point_value(measure: TeacherMeasure) -> float | None:
    return float(measure.atoms[0]) if measure.atoms.size == 1 else None


class _ShiftedMap:
    """m_psi and friends as functions of u, where m = a (theta* + s u).

    For a point-mass teacher of value ``a`` the standardized distance to the
    anchor threshold is exactly ``u``, so nothing is lost when s is tiny.
    General measures use m directly (``anchor=None``).
    """

    def __init__(self, grid: Quantizer, measure: TeacherMeasure, anchor: float | None):
        self.grid = grid
        self.measure = measure
        self.anchor = anchor
        self.a = _point_value(measure)

    def m_of(self, u: float, s: float) -> float:
        if self.anchor is None:
            return u
        return self.a * (self.anchor + s * u)

    def z(self, u: float, s: float) -> np.ndarray:
        """(thresholds, atoms) array of standardized distances."""
        th = self.grid.thresholds
        if self.anchor is None:
            centre = u * self.measure.atoms / self.measure.rho
            return (centre[None, :] - th[:, None]) / s
        # a * m / rho = theta* + s u for a point mass (rho = a^2)
        return ((self.anchor - th) / s + u)[:, None]

    def m_psi(self, u: float, s: float) -> float:
        z = self.z(u, s)
        inner = -self.grid.omega + self.grid.step * norm_cdf(z).sum(axis=0)
        return float(np.sum(self.measure.probs * self.measure.atoms * inner))

    def q_psi(self, u: float, s: float) -> float:
        v = self.grid.levels
        inner = v[0] ** 2 + (np.diff(v**2)[:, None] * norm_cdf(self.z(u, s))).sum(axis=0)
        return float(np.sum(self.measure.probs * inner))

    def pdf_sum(self, u: float, s: float, upto: int | None = None) -> float:
        z = self.z(u, s)[:upto]
        return float(np.sum(self.measure.probs * norm_pdf(z).sum(axis=0)))


def _anchor(c: float, grid: Quantizer, measure: TeacherMeasure) -> float | None:
    a = _point_value(measure)
    if a is None:
        return None
    pos = level_position(c / a, grid)
    return float(grid.thresholds[min(pos.i_star, grid.level_count_minus_one - 1)])


def _solve_u(fmap: _ShiftedMap, c: float, s: float, tol: float = 1e-12) -> float:
    """Bisection on the increasing map u -> m_psi; bracket grows from [-10, 10]."""
    if fmap.anchor is None:
        lo, hi = -10.0 * s, 10.0 * s
    else:
        lo, hi = -10.0, 10.0
    g_lo = fmap.m_psi(lo, s) - c
    g_hi = fmap.m_psi(hi, s) - c
    for _ in range(200):
        if g_lo < 0 < g_hi:
            break
        width = hi - lo
        if g_lo >= 0:
            lo -= width
            g_lo = fmap.m_psi(lo, s) - c
        if g_hi <= 0:
            hi += width
            g_hi = fmap.m_psi(hi, s) - c
    else:
        raise NoInteriorSolution(f"could not bracket m_psi = {c} at s = {s}")
    if g_lo == 0:
        return lo
    if g_hi == 0:
        return hi
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        g = fmap.m_psi(mid, s) - c
        if g == 0 or (abs(g) <= tol and hi - lo <= 1e-9 * max(1.0, abs(mid))):
            return mid
        if g < 0:
            lo = mid
        else:
            hi = mid
    return lo if abs(fmap.m_psi(lo, s) - c) <= abs(fmap.m_psi(hi, s) - c) else hi


def solve_m_given_s(c: float, s: float, grid_w: Quantizer, measure: TeacherMeasure) -> float:
    """The unique m with m_psi(m, s) = c, for |c| below the saturation value."""
    if not s > 0:
        raise ValueError("s must be positive")
    if grid_w.is_identity:
        return c * measure.rho / float(np.sum(measure.probs * measure.atoms**2))
    a = _point_value(measure)
    limit = grid_w.omega * (abs(a) if a is not None else float(np.sum(measure.probs * np.abs(measure.atoms))))
    if abs(c) >= limit:
        raise NoInteriorSolution(f"|c| = {abs(c):.6g} >= {limit:.6g}: no interior solution")
    fmap = _ShiftedMap(grid_w, measure, _anchor(c, grid_w, measure))
    return fmap.m_of(_solve_u(fmap, c, s), s)


@dataclass
class _JointProblem:
    model: ModelConfig
    measure: TeacherMeasure
    noise_var: float
    variant: str

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        mx = self.model.input_moments
        self.kappa, self.sig2 = mx.kappa, mx.sigma_sq
        self.gain = self.sig2 + self.model.ridge
        self.chi = self.sig2 / self.gain
        self.rho = self.measure.rho
        self.c = target_value(self.model, self.rho)
        self.grid = self.model.weight_quantizer
        self.eta = self.model.learning_rate
        if not self.grid.is_identity:
            self.fmap = _ShiftedMap(self.grid, self.measure, _anchor(self.c, self.grid, self.measure))

    def eps(self, m_psi: float, q_psi: float) -> float:
        return self.sig2 * q_psi - 2.0 * self.kappa * m_psi + self.rho + self.noise_var

    def state(self, s: float):
        """(u, m, m_psi, q_psi, eps, G) at spread s on the curve m = m(s)."""
        if self.grid.is_identity:
            m = self.c
            q_psi = m * m / self.rho + s * s
            eps = self.eps(m, q_psi)
            G = 2.0 * s * s / self.chi - self.eta * eps
            return m, m, m, q_psi, eps, G
        u = _solve_u(self.fmap, self.c, s)
        m = self.fmap.m_of(u, s)
        m_psi = self.fmap.m_psi(u, s)
        q_psi = self.fmap.q_psi(u, s)
        eps = self.eps(m_psi, q_psi)
        if self.variant == "appendix":
            lhs = 2.0 * self.grid.step * s / self.chi * self.fmap.pdf_sum(u, s)
        else:
            lhs = 2.0 * self.gain / self.sig2 * s * self.fmap.pdf_sum(u, s, upto=self.grid.level_count_minus_one - 1)
        return u, m, m_psi, q_psi, eps, lhs - self.eta * eps

    def G(self, s: float) -> float:
        return self.state(s)[-1]


def _jacobian(m: float, s: float, ode_config: OdeConfig) -> np.ndarray:
    """Central-difference Jacobian of the (m, q) right-hand side.

    Differences are taken in (m, s) with steps proportional to s and mapped
    to (m, q) by the chain rule; a fixed step in q would swamp the tiny s
    found at small learning rates.
    """
    rho = ode_config.teacher_measure.rho
    hm = 1e-6 * min(1.0, s) * max(1.0, abs(m))
    hs = 1e-6 * s
    fp = np.array(rhs_in_spread(m + hm, s, ode_config))
    fm = np.array(rhs_in_spread(m - hm, s, ode_config))
    d_dm = (fp - fm) / (2 * hm)
    fp = np.array(rhs_in_spread(m, s + hs, ode_config))
    fm = np.array(rhs_in_spread(m, s - hs, ode_config))
    d_ds = (fp - fm) / (2 * hs)
    # s = sqrt(q - m^2 / rho): ds/dm = -m / (rho s), ds/dq = 1 / (2 s)
    col_m = d_dm + d_ds * (-m / (rho * s))
    col_q = d_ds / (2.0 * s)
    return np.column_stack([col_m, col_q])


def _saturated_report(prob: _JointProblem) -> FixedPointReport:
    omega = prob.grid.omega
    a = _point_value(prob.measure) or 1.0
    eps = prob.rho + prob.noise_var - 2.0 * prob.kappa * abs(a) * omega + prob.sig2 * omega * omega
    return FixedPointReport("Joint", math.nan, math.nan, math.nan, eps, None, None, NO_STABILITY,
                            None, SATURATED)


def joint_fixed_point(model: ModelConfig, measure: TeacherMeasure | None = None, noise_var: float = 0.0,
                      variant: str = "appendix", s_max: float | None = None, grid_points: int = 400,
                      s_min: float = 1e-14) -> FixedPointReport:
    """Solve m_psi(m, s) = c together with the stationarity of q.

    The first equation is inverted for m(s); the second becomes the scalar
    equation G(s) = 0, bracketed by scanning a log grid on (s_min, s_max]
    and taking the first sign change.
    """
    measure = measure or TeacherMeasure.point_mass(1.0)
    prob = _JointProblem(model, measure, noise_var, variant)
    regime = None
    if not prob.grid.is_identity:
        a = _point_value(measure)
        if a is not None:
            pos = level_position(prob.c / a, prob.grid)
            regime = pos.regime
            if regime == SATURATED:
                return _saturated_report(prob)
    if s_max is None:
        omega = prob.grid.omega if not prob.grid.is_identity else abs(prob.c)
        s_max = 10.0 * (omega + math.sqrt(prob.rho))
    grid = np.geomspace(s_min, s_max, grid_points)
    prev_s, prev_g = None, None
    bracket = None
    for s in grid:
        g = prob.G(float(s))
        if prev_g is not None and prev_g < 0 <= g:
            bracket = (prev_s, float(s))
            break
        prev_s, prev_g = float(s), g
    if bracket is None:
        raise NoFixedPointFound(f"G has no sign change on ({s_min:g}, {s_max:g}]")
    s_star = optimize.brentq(prob.G, *bracket, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    u, m, m_psi, q_psi, eps, g = prob.state(s_star)
    q = s_star * s_star + m * m / prob.rho
    ode_config = OdeConfig(model, measure, noise_var)
    jac = _jacobian(m, s_star, ode_config)
    eig = np.linalg.eigvals(jac).astype(complex)
    report = FixedPointReport("Joint", m, q, s_star, eps, jac, eig,
                              classify(eig, float(np.abs(jac).max())), None, regime)
    report.residuals = {"m_psi": abs(m_psi - prob.c), "G": abs(g)}
    return report


def small_eta_asymptotics(model: ModelConfig, measure: TeacherMeasure | None = None,
                          noise_var: float = 0.0) -> tuple[str, float, float]:
    """(regime, leading eps_g, excess from weight quantization) as eta -> 0.

    The leading term uses q_psi -> c^2 (the input-only limit), and the excess
    is sigma^2 delta^2 p (1 - p).  In the saturated regime the leading term
    is the clipped predictor's error and the excess is 0.
    """
    measure = measure or TeacherMeasure.point_mass(1.0)
    a = _point_value(measure)
    if a is None:
        raise ValueError("small-eta asymptotics are implemented for a point-mass teacher")
    mx = model.input_moments
    rho = measure.rho
    c = target_value(model, rho)
    base = rho + noise_var - 2.0 * mx.kappa * c + mx.sigma_sq * (c / a) ** 2
    grid = model.weight_quantizer
    if grid.is_identity:
        return INTERIOR, base, 0.0
    pos = level_position(c / a, grid)
    if pos.regime == SATURATED:
        omega = grid.omega
        return SATURATED, rho + noise_var - 2.0 * mx.kappa * abs(a) * omega + mx.sigma_sq * omega * omega, 0.0
    return pos.regime, base, mx.sigma_sq * pos.delta**2 * pos.p * (1.0 - pos.p)


def spread_over_eta_limit(model: ModelConfig, noise_var: float = 0.0) -> float:
    """lim s*/eta for an interior position with w* = 1: chi eps0 / (2 delta phi(Phi^{-1}(p)))."""
    from scipy.special import ndtri

    mx = model.input_moments
    regime, lead, extra = small_eta_asymptotics(model, None, noise_var)
    if regime != INTERIOR:
        raise ValueError("the s*/eta limit exists only for an interior position")
    pos = level_position(target_value(model, 1.0), model.weight_quantizer)
    chi = mx.sigma_sq / (mx.sigma_sq + model.ridge)
    return chi * (lead + extra) / (2.0 * pos.delta * float(norm_pdf(ndtri(pos.p))))


# --- sweeps -----------------------------------------------------------------------

SWEEP_HEADER = ["b_w", "omega_w", "b_x", "omega_x", "eta", "lambda", "m_star", "s_star", "q_star",
                "eps_g_star", "stability", "eta_boundary"]


def sweep_row(model: ModelConfig, report: FixedPointReport) -> list:
    wq, xq = model.weight_quantizer, model.input_quantizer

    def fmt(v):
        return "" if v is None else repr(float(v))

    return [
        "" if wq.is_identity else wq.bits, "" if wq.is_identity else repr(float(wq.omega)),
        "" if xq.is_identity else xq.bits, "" if xq.is_identity else repr(float(xq.omega)),
        repr(float(model.learning_rate)), repr(float(model.ridge)),
        fmt(report.m_star), fmt(report.s_star), fmt(report.q_star), fmt(report.eps_g_star),
        report.stability, fmt(report.eta_boundary),
    ]


def write_sweep_csv(path: str | Path, rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        w.writerows(rows)
