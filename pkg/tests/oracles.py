"""Independent reference computations used by the tests.

Nothing here calls the closed forms under test: quantization is a brute
force nearest-level search, expectations are adaptive quadrature or plain
Monte Carlo, and the linear fixed point is a dense linear solve.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, stats


def nearest_level(levels, x):
    """argmin_k |x - v_k| with ties resolved toward the larger level."""
    levels = np.asarray(levels, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dist = np.abs(x[:, None] - levels[None, :])
    best = dist.min(axis=1, keepdims=True)
    # among the minimizers take the largest index
    mask = np.isclose(dist, best, rtol=0, atol=1e-12)
    idx = levels.size - 1 - np.argmax(mask[:, ::-1], axis=1)
    return levels[idx]


def reference_levels(bits: int, omega: float) -> np.ndarray:
    n = 2**bits - 1
    return np.linspace(-omega, omega, n)


def gaussian_expectation(f, mean: float = 0.0, std: float = 1.0, breaks=()) -> float:
    """E[f(Z)], Z ~ N(mean, std^2), by quad over [-12, 12] std with extra break points."""
    lo, hi = mean - 12 * std, mean + 12 * std
    pts = sorted(b for b in breaks if lo < b < hi)
    knots = [lo, *pts, hi]
    total = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        val, _ = integrate.quad(lambda z: f(z) * stats.norm.pdf(z, mean, std), a, b,
                                epsabs=1e-14, epsrel=1e-12, limit=200)
        total += val
    return total


def mc_mean(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def input_only_stationary(kappa, sig2, rho, noise, lam, eta) -> tuple[float, float]:
    """Stationary (m, q) of the linear ODE obtained with real-valued weights.

    With psi = id the right-hand side is affine in (m, q):
      dm = -eta (g m - kappa rho)
      dq = -2 eta (g q - kappa m) + eta^2 sig2 (sig2 q - 2 kappa m + rho + noise)
    """
    g = sig2 + lam
    A = np.array([
        [-eta * g, 0.0],
        [2 * eta * kappa - 2 * eta**2 * sig2 * kappa, -2 * eta * g + eta**2 * sig2**2],
    ])
    b = np.array([eta * kappa * rho, eta**2 * sig2 * (rho + noise)])
    m, q = np.linalg.solve(A, -b)
    return float(m), float(q)


def heat_variance_growth(diffusion: float, dt: float) -> float:
    return 2.0 * diffusion * dt
