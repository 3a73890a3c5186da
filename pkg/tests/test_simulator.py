from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stelab.errors import DimError, DivergenceError
from stelab.model import (
    ModelConfig,
    Sample,
    SampleStream,
    TeacherDist,
    TeacherSpec,
    local_field_covariance,
    local_fields,
    sample_teacher,
)
from stelab.ode import OdeConfig, OdeState, TeacherMeasure, ode_rhs
from stelab.quantizer import IDENTITY, QuantizerGrid
from stelab.simulator import (
    OBSERVABLES,
    SimConfig,
    _initial_weights,
    conditional_drift,
    conditional_second_moment,
    macro_observables,
    run_simulation,
    simulate_run,
    ste_step,
)

B2 = QuantizerGrid(2, 1.0)


def _cfg(**kw):
    base = dict(weight_quantizer=QuantizerGrid(3, 1.0), input_quantizer=QuantizerGrid(2, 1.0), ridge=0.5,
                learning_rate=0.1)
    base.update(kw)
    return ModelConfig(**base)


class TestSteStep:
    def test_zero_rate_is_identity_map(self):
        # the smallest admissible rate stands in for eta = 0
        w = np.random.default_rng(0).standard_normal(8)
        out = ste_step(w, Sample(np.ones(8), 3.0), ModelConfig(B2, B2, 1.0, 1e-300))
        np.testing.assert_array_equal(out, w)

    def test_scalar_sgd(self):
        out = ste_step(np.zeros(1), Sample(np.ones(1), 1.0), ModelConfig(learning_rate=1.0))
        np.testing.assert_array_equal(out, [1.0])

    def test_dead_zone_has_no_ridge_pull(self):
        w = np.array([0.1, -0.3, 0.2])
        cfg_a = ModelConfig(B2, IDENTITY, 0.0, 0.2)
        cfg_b = ModelConfig(B2, IDENTITY, 5.0, 0.2)
        s = Sample(np.array([0.3, -1.0, 2.0]), 0.7)
        np.testing.assert_array_equal(ste_step(w, s, cfg_a), ste_step(w, s, cfg_b))

    def test_straight_through_formula(self):
        rng = np.random.default_rng(1)
        d = 7
        cfg = _cfg()
        w, x = rng.standard_normal(d), rng.standard_normal(d)
        pw, px = cfg.weight_quantizer(w), cfg.input_quantizer(x)
        y = 0.4
        expected = w - cfg.learning_rate * ((pw @ px / math.sqrt(d) - y) / math.sqrt(d) * px + cfg.ridge / d * pw)
        np.testing.assert_allclose(ste_step(w, Sample(x, y), cfg), expected, rtol=1e-15)

    def test_divergence(self):
        with pytest.raises(DivergenceError) as info:
            ste_step(np.array([1e8]), Sample(np.array([1e5]), 0.0), ModelConfig(learning_rate=1.0), step=17)
        assert info.value.step == 17

    def test_dim_mismatch(self):
        with pytest.raises(DimError):
            ste_step(np.zeros(3), Sample(np.zeros(4), 0.0), ModelConfig())


class TestMacroObservables:
    def test_teacher_recovery(self):
        t = sample_teacher(TeacherSpec(40, 1.7, TeacherDist("gaussian")), 3)
        st_ = macro_observables(t, t, ModelConfig())
        for name in ("m", "q", "m_psi", "q_psi", "r_psi"):
            assert getattr(st_, name) == pytest.approx(1.7)
        assert st_.s == pytest.approx(0.0, abs=1e-6)
        assert st_.eps_g == pytest.approx(0.0, abs=1e-12)

    def test_zero_weights(self):
        st_ = macro_observables(np.zeros(10), np.ones(10), _cfg(), noise_var=0.3)
        assert (st_.m, st_.q, st_.m_psi, st_.q_psi, st_.r_psi) == (0, 0, 0, 0, 0)
        assert st_.eps_g == pytest.approx(1.3)

    def test_gaussian_weights_clt(self):
        d = 10_000
        w = np.random.default_rng(2).standard_normal(d)
        st_ = macro_observables(w, np.ones(d), _cfg())
        assert abs(st_.m) < 4 / math.sqrt(d)
        assert abs(st_.q - 1) < 4 * math.sqrt(2) / math.sqrt(d)

    @given(st.integers(2, 60), st.integers(0, 1000))
    def test_invariants(self, d, seed):
        rng = np.random.default_rng(seed)
        cfg = _cfg()
        t = sample_teacher(TeacherSpec(d, 1.0, TeacherDist("gaussian")), seed)
        st_ = macro_observables(3 * rng.standard_normal(d), t, cfg)
        om = cfg.weight_quantizer.omega
        assert st_.q >= st_.m**2 - 1e-12
        assert 0 <= st_.q_psi <= om**2 + 1e-12
        assert abs(st_.m_psi) <= om + 1e-12


class TestOneStepMoments:
    def test_drift_matches_formula(self):
        d = 200
        cfg = _cfg(ridge=0.7, learning_rate=0.3)
        teacher = sample_teacher(TeacherSpec(d, 1.0, TeacherDist("gaussian")), 0)
        w = np.random.default_rng(5).standard_normal(d)
        x, y = SampleStream(teacher, 0.2, seed=9).batch(40_000)
        px = cfg.input_quantizer(x)
        pw = cfg.weight_quantizer(w)
        err = px @ pw / math.sqrt(d) - y
        dw = -cfg.learning_rate * (err[:, None] / math.sqrt(d) * px[:, :5] + cfg.ridge / d * pw[:5])
        mean, se = dw.mean(axis=0), dw.std(axis=0, ddof=1) / math.sqrt(len(y))
        assert np.all(np.abs(mean - conditional_drift(w, teacher, cfg)[:5]) <= 4 * se)
        second = (dw**2).mean(axis=0)
        target = conditional_second_moment(w, teacher, cfg, 0.2)
        np.testing.assert_allclose(second, target, rtol=0.1)


class TestLocalFields:
    def test_covariance_of_sum(self):
        d = 300
        cfg = _cfg()
        rng = np.random.default_rng(4)
        teacher = sample_teacher(TeacherSpec(d), 0)
        w = rng.standard_normal(d) + 0.5
        x = rng.standard_normal((20_000, d))
        f = local_fields(cfg, w, teacher, x)
        sigma = local_field_covariance(cfg, w, teacher)
        emp = np.cov(f, rowvar=False)
        c = f - f.mean(axis=0)
        se = np.array([[np.std(c[:, i] * c[:, j], ddof=1) for j in range(4)] for i in range(4)]) / math.sqrt(len(f))
        assert np.all(np.abs(emp - sigma) <= 5 * se)

    def test_dim_check(self):
        with pytest.raises(DimError):
            local_fields(_cfg(), np.ones(3), np.ones(4), np.ones((2, 3)))


class TestRunSimulation:
    def _sim(self, **kw):
        base = dict(model=ModelConfig(QuantizerGrid(2, 1.0), IDENTITY, 1.0, 0.04), teacher=TeacherSpec(50),
                    horizon_tau=2.0, record_stride_tau=0.5, runs=3, master_seed=11)
        base.update(kw)
        return SimConfig(**base)

    def test_compiled_loop_matches_reference_step(self):
        cfg = self._sim(model=_cfg(learning_rate=0.05), runs=1, horizon_tau=1.0, record_stride_tau=1.0)
        teacher = sample_teacher(cfg.teacher, cfg.master_seed)
        tau, rows, _ = simulate_run(cfg, 0, teacher)
        w = _initial_weights(cfg, 0)
        stream = SampleStream(teacher, 0.0, cfg.master_seed, 0)
        x, y = stream.batch(cfg.steps)
        for t in range(cfg.steps):
            w = ste_step(w, Sample(x[t], y[t]), cfg.model, t)
        ref = macro_observables(w, teacher, cfg.model, 0.0, 1.0)
        np.testing.assert_allclose(rows[-1], [getattr(ref, k) for k in OBSERVABLES], rtol=1e-10, atol=1e-12)

    def test_soft_weights_supported(self):
        model = ModelConfig(QuantizerGrid(2, 1.0, temperature=0.2), IDENTITY, 1.0, 0.04)
        cfg = self._sim(model=model, runs=1, horizon_tau=0.2, record_stride_tau=0.2)
        teacher = sample_teacher(cfg.teacher, cfg.master_seed)
        tau, rows, _ = simulate_run(cfg, 0, teacher)
        w = _initial_weights(cfg, 0)
        x, y = SampleStream(teacher, 0.0, cfg.master_seed, 0).batch(cfg.steps)
        for t in range(cfg.steps):
            w = ste_step(w, Sample(x[t], y[t]), model, t)
        ref = macro_observables(w, teacher, model, 0.0, 0.2)
        np.testing.assert_allclose(rows[-1], [getattr(ref, k) for k in OBSERVABLES], rtol=1e-9, atol=1e-12)

    def test_deterministic_and_thread_independent(self):
        a = run_simulation(self._sim())
        b = run_simulation(self._sim(threads=3))
        for k in OBSERVABLES:
            np.testing.assert_array_equal(a.mean[k], b.mean[k])
            np.testing.assert_array_equal(a.stderr[k], b.stderr[k])

    def test_seed_changes_result(self):
        a = run_simulation(self._sim())
        b = run_simulation(self._sim(master_seed=12))
        assert not np.array_equal(a.eps_g, b.eps_g)

    def test_record_grid(self):
        tr = run_simulation(self._sim())
        np.testing.assert_allclose(tr.tau, [0, 0.5, 1.0, 1.5, 2.0])
        assert np.all(np.diff(tr.tau) > 0)
        assert len(tr.states) == 5
        assert tr.run_count == 3 and set(tr.stderr) == set(OBSERVABLES)

    def test_single_run_has_no_stderr(self):
        tr = run_simulation(self._sim(runs=1))
        assert tr.stderr == {}
        np.testing.assert_array_equal(tr.eps_g_stderr, 0.0)

    def test_zero_init(self):
        tr = run_simulation(self._sim(init="zero", runs=1))
        assert tr.mean["q"][0] == 0 and tr.eps_g[0] == pytest.approx(1.0)

    def test_custom_init(self):
        w0 = np.full(50, 0.3)
        tr = run_simulation(self._sim(init=w0, runs=1))
        assert tr.mean["q"][0] == pytest.approx(0.09)
        with pytest.raises(DimError):
            run_simulation(self._sim(init=np.zeros(3), runs=1))

    @pytest.mark.parametrize("kw", [{"horizon_tau": 0.001}, {"record_stride_tau": 5.0}, {"runs": 0},
                                    {"init": "uniform"}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            self._sim(**kw)

    def test_histograms_normalized(self):
        tr = run_simulation(self._sim(histogram_taus=(1.0, 2.0), hist_bins=31))
        assert [h.tau for h in tr.histograms] == [1.0, 2.0]
        for h in tr.histograms:
            assert h.conditioning_value == 1.0
            assert np.all(h.densities >= 0)
            assert np.sum(h.densities * np.diff(h.bin_edges)) == pytest.approx(1.0, abs=1e-9)
            assert h.bin_edges[0] == -4.0 and h.bin_edges[-1] == 4.0
            assert h.centers.size == 31

    def test_divergence_keeps_partial(self):
        model = ModelConfig(IDENTITY, IDENTITY, 0.0, 5.0)
        cfg = self._sim(model=model, horizon_tau=100.0, record_stride_tau=1.0, runs=1)
        with pytest.raises(DivergenceError) as info:
            run_simulation(cfg)
        tau, rows, _ = info.value.partial
        assert tau.size >= 1 and rows.shape[1] == len(OBSERVABLES)
        assert info.value.step > 0

    def test_small_rate_matches_one_euler_step(self):
        # with tiny eta the macroscopic change over a short horizon is eta * tau * rhs + O(eta^2)
        d = 400
        eta, tau = 1e-3, 1.0
        model = ModelConfig(QuantizerGrid(3, 1.0), QuantizerGrid(2, 1.0), 0.5, eta)
        cfg = SimConfig(model, TeacherSpec(d), tau, tau, runs=4, master_seed=1)
        tr = run_simulation(cfg, keep_runs=True)
        dm_sim = tr.per_run["m"][:, 1] - tr.per_run["m"][:, 0]
        dq_sim = tr.per_run["q"][:, 1] - tr.per_run["q"][:, 0]
        # evaluate the isotropic right-hand side at each run's own initial state
        ode_cfg = OdeConfig(model, TeacherMeasure.point_mass(1.0))
        rhs = np.array([ode_rhs(OdeState(0.0, m0, q0), ode_cfg) for m0, q0 in
                        zip(tr.per_run["m"][:, 0], tr.per_run["q"][:, 0])])
        # drift of m is exact in expectation; fluctuations are eta * O(sqrt(tau / d))
        noise = eta * math.sqrt(tau / d) * 3
        assert np.all(np.abs(dm_sim - tau * rhs[:, 0]) < noise + eta**2 * 10)
        assert np.all(np.abs(dq_sim - tau * rhs[:, 1]) < 2 * noise + eta * 0.05 + eta**2 * 10)
