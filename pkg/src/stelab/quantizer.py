"""Uniform symmetric quantizers and the Gaussian expectations built on them.

A b-bit quantizer with range ``omega`` has ``L + 1 = 2**b - 1`` levels
``v_k = -omega + k * delta`` (``delta = 2 * omega / L``) and decision
thresholds halfway between neighbouring levels.  The level count is odd,
so zero is always a level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import integrate, special

from .errors import DegenerateQuantizer, InvalidRange, NonFiniteInput

SQRT2 = math.sqrt(2.0)
INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def norm_cdf(x):
    """Standard normal CDF via erfc (accurate in the lower tail)."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) / SQRT2)
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / SQRT2)


def norm_pdf(x):
    if np.ndim(x) == 0:
        x = float(x)
        return INV_SQRT2PI * math.exp(-0.5 * x * x)
    x = np.asarray(x, dtype=float)
    return INV_SQRT2PI * np.exp(-0.5 * x * x)


@dataclass(frozen=True)
class QuantizerSpec:
    bits: int
    range: float
    temperature: float = 0.0

    def __post_init__(self):
        if int(self.bits) != self.bits or self.bits < 2:
            raise DegenerateQuantizer(f"bits must be an integer >= 2, got {self.bits}")
        if not (math.isfinite(self.range) and self.range > 0):
            raise InvalidRange(f"range must be positive and finite, got {self.range}")
        if not (math.isfinite(self.temperature) and self.temperature >= 0):
            raise InvalidRange(f"temperature must be >= 0, got {self.temperature}")


@dataclass(frozen=True)
class QuantizerMoments:
    kappa: float
    sigma_sq: float


@dataclass(frozen=True)
class QuantizerGrid:
    """Levels and thresholds of one uniform quantizer.

    Arrays are stored read-only; equality is decided by ``bits`` and ``omega``.
    """

    bits: int
    omega: float
    temperature: float = 0.0
    levels: np.ndarray = field(init=False, repr=False, compare=False)
    thresholds: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        QuantizerSpec(self.bits, self.omega, self.temperature)
        L = self.level_count_minus_one
        k = np.arange(L + 1)
        # (2k - L) / L is exactly antisymmetric under k -> L - k
        levels = self.omega * (2 * k - L) / L
        kt = np.arange(1, L + 1)
        thresholds = self.omega * (2 * kt - 1 - L) / L
        levels.setflags(write=False)
        thresholds.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "thresholds", thresholds)

    @property
    def level_count_minus_one(self) -> int:
        return 2 ** int(self.bits) - 2

    L = level_count_minus_one

    @property
    def step(self) -> float:
        return 2.0 * self.omega / self.level_count_minus_one

    delta = step

    @property
    def is_identity(self) -> bool:
        return False

    def __call__(self, x):
        return quantize_hard(self, x)

    def moments(self) -> QuantizerMoments:
        return moments_closed_form(self)


class IdentityQuantizer:
    """The "no quantization" variant: psi(x) = x, kappa = sigma^2 = 1."""

    is_identity = True
    temperature = 0.0
    bits = None
    omega = math.inf

    def __call__(self, x):
        return _check_finite(x)

    def moments(self) -> QuantizerMoments:
        return QuantizerMoments(kappa=1.0, sigma_sq=1.0)

    def __eq__(self, other):
        return isinstance(other, IdentityQuantizer)

    def __hash__(self):
        return hash("IdentityQuantizer")

    def __repr__(self):
        return "IdentityQuantizer()"


IDENTITY = IdentityQuantizer()

Quantizer = Union[QuantizerGrid, IdentityQuantizer]


def build_grid(spec: QuantizerSpec) -> QuantizerGrid:
    return QuantizerGrid(spec.bits, spec.range, spec.temperature)


def make_quantizer(bits: int | None, omega: float | None = None, temperature: float = 0.0) -> Quantizer:
    """``bits=None`` gives the identity quantizer."""
    if bits is None:
        return IDENTITY
    return QuantizerGrid(int(bits), float(omega), float(temperature))


def _check_finite(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("quantizer input contains NaN or inf")
    return arr if arr.ndim else float(arr)


def quantize_hard(grid: Quantizer, x):
    """Nearest level; a value exactly on a threshold goes to the upper level."""
    x = _check_finite(x)
    if grid.is_identity:
        return x
    idx = np.searchsorted(grid.thresholds, x, side="right")
    out = grid.levels[idx]
    return out if np.ndim(out) else float(out)


def quantize_soft(grid: Quantizer, T: float, x):
    """Temperature-smoothed quantizer ``-omega + delta * sum_k Phi((x - theta_k) / T)``."""
    if not T > 0:
        raise ValueError("soft quantization needs T > 0; use quantize_hard for T = 0")
    x = _check_finite(x)
    if grid.is_identity:
        return x
    z = (np.asarray(x, dtype=float)[..., None] - grid.thresholds) / T
    out = -grid.omega + grid.step * norm_cdf(z).sum(axis=-1)
    return out if np.ndim(out) else float(out)


def quantize(grid: Quantizer, x, T: float | None = None):
    """Apply the grid at its own temperature unless ``T`` overrides it."""
    T = grid.temperature if T is None else T
    if T > 0:
        return quantize_soft(grid, T, x)
    return quantize_hard(grid, x)


def moments_closed_form(grid: Quantizer) -> QuantizerMoments:
    if grid.is_identity:
        return QuantizerMoments(1.0, 1.0)
    th = grid.thresholds
    kappa = grid.step * float(norm_pdf(th).sum())
    edges = np.concatenate(([0.0], norm_cdf(th), [1.0]))
    sigma_sq = float(np.sum(grid.levels**2 * np.diff(edges)))
    return QuantizerMoments(kappa=kappa, sigma_sq=sigma_sq)


def moments_oracle(grid: Quantizer, cutoff: float = 10.0) -> QuantizerMoments:
    """Adaptive quadrature of E[X psi(X)] and E[psi(X)^2] for X ~ N(0, 1).

    The integration range is split at every threshold so each piece has a
    constant integrand factor; the level on a piece is read back through
    ``quantize_hard`` at the piece midpoint rather than from ``grid.levels``.
    """
    if grid.is_identity:
        val, _ = integrate.quad(lambda x: x * x * norm_pdf(x), -cutoff, cutoff, epsabs=1e-14, epsrel=1e-13)
        return QuantizerMoments(val, val)
    cuts = [-cutoff] + [t for t in grid.thresholds if -cutoff < t < cutoff] + [cutoff]
    kappa = 0.0
    sigma_sq = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        level = quantize_hard(grid, 0.5 * (lo + hi))
        first, _ = integrate.quad(lambda x: x * norm_pdf(x), lo, hi, epsabs=1e-14, epsrel=1e-12)
        mass, _ = integrate.quad(norm_pdf, lo, hi, epsabs=1e-14, epsrel=1e-12)
        kappa += level * first
        sigma_sq += level * level * mass
    return QuantizerMoments(kappa=kappa, sigma_sq=sigma_sq)


# Gaussian convolution identities.  X ~ N(m, s^2), smoothing temperature T.


def _smoothed_scale(s: float, T: float) -> float:
    if s < 0 or T < 0 or s + T <= 0:
        raise ValueError(f"need s >= 0, T >= 0 and s + T > 0 (got s={s}, T={T})")
    return math.hypot(s, T)


def gauss_smoothed_cdf(m: float, s: float, a: float, T: float) -> float:
    """E[Phi((X - a) / T)]; for T = 0 this is P(X >= a)."""
    return norm_cdf((m - a) / _smoothed_scale(s, T))


def gauss_smoothed_pdf(m: float, s: float, a: float, T: float) -> float:
    """E[phi((X - a) / T)] = T / sqrt(s^2 + T^2) * phi((m - a) / sqrt(s^2 + T^2))."""
    scale = _smoothed_scale(s, T)
    return T / scale * norm_pdf((m - a) / scale)


def gauss_mixed_moment(m: float, s: float, a: float, T: float) -> float:
    """E[X Phi((X - a) / T)] (Stein's lemma)."""
    scale = _smoothed_scale(s, T)
    z = (m - a) / scale
    return m * norm_cdf(z) + s * s / scale * norm_pdf(z)


def gauss_bivariate_term(m: float, s: float, a: float, b: float, T: float) -> float:
    """E[Phi((X - a) / T) Phi((X - b) / T)].

    For T > 0 this is a bivariate normal CDF with correlation s^2 / (s^2 + T^2);
    it is evaluated by integrating over the Gaussian factor shared by both
    smoothed indicators.  T = 0 collapses to P(X >= max(a, b)).
    """
    if s < 0 or T < 0 or s + T <= 0:
        raise ValueError(f"need s >= 0, T >= 0 and s + T > 0 (got s={s}, T={T})")
    if T == 0:
        return norm_cdf((m - max(a, b)) / s)
    if s == 0:
        return norm_cdf((m - a) / T) * norm_cdf((m - b) / T)

    def integrand(u):
        x = m + s * u
        return norm_pdf(u) * norm_cdf((x - a) / T) * norm_cdf((x - b) / T)

    breaks = sorted(p for p in ((a - m) / s, (b - m) / s) if -12.0 < p < 12.0)
    knots = [-12.0] + breaks + [12.0]
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-13, epsrel=1e-11, limit=200)
        total += val
    return total


def mills_bound(x: float) -> float:
    """Upper bound phi(x) / x on the Gaussian upper tail, valid for x > 0."""
    if x <= 0:
        raise ValueError("Mills' bound needs x > 0")
    return norm_pdf(x) / x
