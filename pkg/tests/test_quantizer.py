from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from oracles import gaussian_expectation, mc_mean, nearest_level, reference_levels
from stelab.errors import DegenerateQuantizer, InvalidRange, NonFiniteInput
from stelab.quantizer import (
    IDENTITY,
    QuantizerGrid,
    QuantizerSpec,
    build_grid,
    gauss_bivariate_term,
    gauss_mixed_moment,
    gauss_smoothed_cdf,
    gauss_smoothed_pdf,
    make_quantizer,
    mills_bound,
    moments_closed_form,
    moments_oracle,
    norm_cdf,
    norm_pdf,
    quantize,
    quantize_hard,
    quantize_soft,
)

# kappa = 2 phi(1/2), sigma^2 = 2 Phi(-1/2) for b=2, omega=1 (30-digit values)
KAPPA_B2_W1 = 0.704130653528598955549360883193
SIGMA_B2_W1 = 0.617075077451973792724590778783
# kappa = 4 phi(1), sigma^2 = 8 Phi(-1) for b=2, omega=2
KAPPA_B2_W2 = 0.967882898076573399191320771742
SIGMA_B2_W2 = 1.26924203145165641131813963494

bits_st = st.integers(2, 8)
omega_st = st.floats(0.05, 8.0)


class TestGrid:
    @pytest.mark.parametrize(
        "bits, omega, levels, thresholds",
        [
            (2, 1.0, [-1, 0, 1], [-0.5, 0.5]),
            (3, 1.0, [-1, -2 / 3, -1 / 3, 0, 1 / 3, 2 / 3, 1], [-5 / 6, -0.5, -1 / 6, 1 / 6, 0.5, 5 / 6]),
            (2, 2.0, [-2, 0, 2], [-1, 1]),
        ],
    )
    def test_small_grids(self, bits, omega, levels, thresholds):
        g = build_grid(QuantizerSpec(bits, omega))
        assert g.L == 2**bits - 2
        assert g.delta == pytest.approx(2 * omega / g.L)
        np.testing.assert_allclose(g.levels, levels, atol=1e-15)
        np.testing.assert_allclose(g.thresholds, thresholds, atol=1e-15)

    @given(bits_st, omega_st)
    def test_invariants(self, bits, omega):
        g = QuantizerGrid(bits, omega)
        v, th = g.levels, g.thresholds
        assert np.all(np.diff(v) > 0) and np.all(np.diff(th) > 0)
        np.testing.assert_array_equal(v, -v[::-1])
        np.testing.assert_array_equal(th, -th[::-1])
        assert np.all(v[:-1] < th) and np.all(th < v[1:])
        assert g.L * g.delta == pytest.approx(2 * omega, rel=4e-16)
        np.testing.assert_allclose(v, reference_levels(bits, omega), rtol=0, atol=4e-15 * omega)

    def test_arrays_read_only(self):
        g = QuantizerGrid(3, 1.0)
        with pytest.raises(ValueError):
            g.levels[0] = 5.0

    @pytest.mark.parametrize("bits", [1, 0, -3, 2.5])
    def test_rejects_degenerate_bits(self, bits):
        with pytest.raises(DegenerateQuantizer):
            QuantizerSpec(bits, 1.0)

    @pytest.mark.parametrize("omega", [0.0, -1.0, math.inf, math.nan])
    def test_rejects_bad_range(self, omega):
        with pytest.raises(InvalidRange):
            QuantizerGrid(2, omega)

    def test_rejects_negative_temperature(self):
        with pytest.raises(InvalidRange):
            QuantizerSpec(2, 1.0, -0.1)

    def test_make_quantizer(self):
        assert make_quantizer(None) is IDENTITY
        assert make_quantizer(3, 1.5) == QuantizerGrid(3, 1.5)


class TestHard:
    @pytest.mark.parametrize("x, expected", [(0.7, 1.0), (-0.5, 0.0), (0.5, 1.0), (100.0, 1.0), (-100.0, -1.0),
                                             (0.49, 0.0), (-0.51, -1.0)])
    def test_examples(self, x, expected):
        assert quantize_hard(QuantizerGrid(2, 1.0), x) == expected

    @pytest.mark.parametrize("bits", [2, 3, 4, 6])
    @pytest.mark.parametrize("omega", [0.25, 1.0, 3.0])
    def test_matches_nearest_level_search(self, bits, omega):
        g = QuantizerGrid(bits, omega)
        x = np.linspace(-omega - 1, omega + 1, 20001)
        x = np.concatenate([x, g.thresholds])  # exact ties
        np.testing.assert_array_equal(quantize_hard(g, x), nearest_level(g.levels, x))

    @given(bits_st, omega_st, st.floats(-20, 20))
    def test_output_is_a_level_and_monotone(self, bits, omega, x):
        g = QuantizerGrid(bits, omega)
        y = quantize_hard(g, x)
        assert y in set(g.levels.tolist())
        assert quantize_hard(g, x + 0.1) >= y
        assert quantize_hard(g, -x) == pytest.approx(-y) or x in set(g.thresholds.tolist()) or -x in set(g.thresholds.tolist())

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_rejects_non_finite(self, bad):
        with pytest.raises(NonFiniteInput):
            quantize_hard(QuantizerGrid(2, 1.0), bad)
        with pytest.raises(NonFiniteInput):
            quantize_hard(QuantizerGrid(2, 1.0), np.array([0.0, bad]))
        with pytest.raises(NonFiniteInput):
            IDENTITY(np.array([bad]))

    def test_identity_passes_through(self):
        x = np.array([-3.2, 0.1, 7.0])
        np.testing.assert_array_equal(quantize(IDENTITY, x), x)


class TestSoft:
    def test_zero_is_fixed(self):
        for bits in (2, 3, 5):
            assert quantize_soft(QuantizerGrid(bits, 1.3), 0.7, 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_substitution(self):
        expected = -1 + stats.norm.cdf(1.0) + stats.norm.cdf(0.0)
        assert quantize_soft(QuantizerGrid(2, 1.0), 1.0, 0.5) == pytest.approx(expected, rel=1e-14)

    def test_low_temperature_limit(self):
        assert quantize_soft(QuantizerGrid(2, 1.0), 1e-8, 0.7) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("T", [1e-1, 1e-2, 1e-3])
    def test_converges_away_from_thresholds(self, T):
        g = QuantizerGrid(3, 1.0)
        x = np.linspace(-2, 2, 4001)
        gap = np.min(np.abs(x[:, None] - g.thresholds[None, :]), axis=1)
        keep = gap > 0.05
        err = np.max(np.abs(quantize_soft(g, T, x[keep]) - quantize_hard(g, x[keep])))
        # distance to the nearest threshold is >= 0.05, so the error is below delta * Phi(-0.05 / T) * L
        assert err <= g.L * g.delta * stats.norm.sf(0.05 / T) + 1e-15

    @given(bits_st, omega_st, st.floats(0.01, 3.0), st.floats(-10, 10), st.floats(1e-3, 2.0))
    def test_monotone(self, bits, omega, T, x, dx):
        g = QuantizerGrid(bits, omega)
        assert quantize_soft(g, T, x + dx) >= quantize_soft(g, T, x)

    def test_rejects_nonpositive_temperature(self):
        with pytest.raises(ValueError):
            quantize_soft(QuantizerGrid(2, 1.0), 0.0, 0.3)

    def test_dispatch_on_grid_temperature(self):
        g = QuantizerGrid(2, 1.0, temperature=0.5)
        assert quantize(g, 0.3) == pytest.approx(quantize_soft(g, 0.5, 0.3))
        assert quantize(g, 0.3, T=0.0) == 0.0


class TestMoments:
    @pytest.mark.parametrize(
        "grid, kappa, sigma_sq",
        [(QuantizerGrid(2, 1.0), KAPPA_B2_W1, SIGMA_B2_W1), (QuantizerGrid(2, 2.0), KAPPA_B2_W2, SIGMA_B2_W2),
         (IDENTITY, 1.0, 1.0)],
    )
    def test_frozen_values(self, grid, kappa, sigma_sq):
        for mom in (moments_closed_form(grid), moments_oracle(grid)):
            assert mom.kappa == pytest.approx(kappa, rel=1e-12)
            assert mom.sigma_sq == pytest.approx(sigma_sq, rel=1e-12)

    @pytest.mark.parametrize("bits", [2, 3, 4, 5])
    @pytest.mark.parametrize("omega", [0.5, 2.0])
    def test_against_generic_quadrature(self, bits, omega):
        # quadrature of the brute-force quantizer, independent of the library's oracle
        g = QuantizerGrid(bits, omega)
        psi = lambda z: float(nearest_level(g.levels, z)[0])  # noqa: E731
        kappa = gaussian_expectation(lambda z: z * psi(z), breaks=g.thresholds)
        sig2 = gaussian_expectation(lambda z: psi(z) ** 2, breaks=g.thresholds)
        mom = moments_closed_form(g)
        assert mom.kappa == pytest.approx(kappa, abs=1e-10)
        assert mom.sigma_sq == pytest.approx(sig2, abs=1e-10)

    @given(bits_st, omega_st)
    def test_ranges(self, bits, omega):
        mom = moments_closed_form(QuantizerGrid(bits, omega))
        assert mom.kappa > 0
        assert 0 < mom.sigma_sq <= omega**2 * (1 + 1e-12)
        # Cauchy-Schwarz: E[X psi]^2 <= E[psi^2]
        assert mom.kappa**2 <= mom.sigma_sq * (1 + 1e-12)

    def test_approaches_identity_for_fine_wide_grids(self):
        mom = moments_closed_form(QuantizerGrid(12, 8.0))
        assert mom.kappa == pytest.approx(1.0, abs=1e-5)
        assert mom.sigma_sq == pytest.approx(1.0, abs=1e-5)


class TestKernels:
    def test_cdf_trivial(self):
        assert gauss_smoothed_cdf(0.3, 0.9, 0.3, 0.4) == 0.5
        assert gauss_smoothed_cdf(1.0, 1.0, 0.0, 0.0) == pytest.approx(stats.norm.cdf(1.0), rel=1e-15)

    def test_pdf_trivial(self):
        assert gauss_smoothed_pdf(0.2, 0.0, 0.2, 1.0) == pytest.approx(norm_pdf(0.0))
        assert gauss_smoothed_pdf(0.0, 1.0, 0.0, 1.0) == pytest.approx(norm_pdf(0.0) / math.sqrt(2))

    def test_mixed_trivial(self):
        assert gauss_mixed_moment(0.0, 1.0, 0.0, 0.0) == pytest.approx(norm_pdf(0.0))
        assert gauss_mixed_moment(1.0, 0.0, 0.0, 1.0) == pytest.approx(stats.norm.cdf(1.0))

    def test_bivariate_trivial(self):
        assert gauss_bivariate_term(0.4, 0.8, 0.1, 0.1, 0.0) == pytest.approx(stats.norm.cdf(0.3 / 0.8))
        assert gauss_bivariate_term(0.3, 0.7, -40.0, 0.2, 0.5) == pytest.approx(
            gauss_smoothed_cdf(0.3, 0.7, 0.2, 0.5), abs=1e-12)

    def test_bivariate_matches_scipy_bivariate_cdf(self):
        m, s, a, b, T = 0.3, 0.8, -0.2, 0.5, 0.6
        r = s * s / (s * s + T * T)
        scale = math.hypot(s, T)
        cov = [[1, r], [r, 1]]
        expected = stats.multivariate_normal(mean=[0, 0], cov=cov).cdf([(m - a) / scale, (m - b) / scale])
        assert gauss_bivariate_term(m, s, a, b, T) == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize("seed", range(3))
    def test_monte_carlo_point(self, seed):
        rng = np.random.default_rng(seed)
        m, a, b = rng.uniform(-1, 1, 3)
        s, T = rng.uniform(0.2, 1.5, 2)
        X = m + s * rng.standard_normal(200_000)
        ca, cb = norm_cdf((X - a) / T), norm_cdf((X - b) / T)
        cases = [
            (gauss_smoothed_cdf(m, s, a, T), ca),
            (gauss_smoothed_pdf(m, s, a, T), norm_pdf((X - a) / T)),
            (gauss_mixed_moment(m, s, a, T), X * ca),
            (gauss_bivariate_term(m, s, a, b, T), ca * cb),
        ]
        for closed, samples in cases:
            mean, se = mc_mean(samples)
            assert abs(closed - mean) <= 4 * se

    @pytest.mark.parametrize("x", [0.5, 1.0, 2.0, 5.0])
    def test_mills(self, x):
        assert stats.norm.sf(x) <= mills_bound(x)

    def test_mills_domain(self):
        with pytest.raises(ValueError):
            mills_bound(0.0)

    @pytest.mark.parametrize("fn", [gauss_smoothed_cdf, gauss_smoothed_pdf, gauss_mixed_moment])
    def test_domain_checks(self, fn):
        with pytest.raises(ValueError):
            fn(0.0, 0.0, 0.0, 0.0)

    def test_lower_tail_accuracy(self):
        assert norm_cdf(-30.0) == pytest.approx(stats.norm.cdf(-30.0), rel=1e-13)
