import numpy as np
import pytest

from arhsmm import (FitWarning, LabelTrack, ModelParams, RegimeParams,
                    Sequence, SuffStats, default_unsupervised_init, e_step,
                    em_fit, forward, m_step, sample_sequence, solve_nu,
                    supervised_fit, update_sigma, weighted_least_squares)
from arhsmm.learning import InitConfig, _dirac_stats
from arhsmm.observation import ar_design_matrix
from helpers import recovery_model, separated_dynamics_model
from oracles import brute_force, random_model


def seq_of(y, rate=50.0):
    return Sequence(samples=np.asarray(y, dtype=float), sample_rate=rate)


class TestEStep:
    def test_matches_enumeration_posteriors(self):
        rng = np.random.default_rng(40)
        for _ in range(10):
            m = random_model(rng, K=int(rng.integers(1, 3)), p=int(rng.integers(0, 2)),
                             D=int(rng.integers(1, 4)))
            y = rng.normal(size=int(rng.integers(m.ar_order + 2, 7)))
            ref = brute_force(m, y)
            st = e_step(m, seq_of(y))
            assert np.allclose(st.gamma, ref["gamma"], atol=1e-9)
            assert np.allclose(st.xi_agg, ref["xi_agg"], atol=1e-9)
            assert np.allclose(st.dur_stats, ref["dur_stats"], atol=1e-9)
            assert st.loglik == pytest.approx(ref["loglik"], rel=1e-10)

    def test_gamma_rows_normalized(self):
        rng = np.random.default_rng(41)
        m = random_model(rng, K=3, p=1, D=4)
        st = e_step(m, seq_of(rng.normal(size=500)))
        assert np.allclose(st.gamma.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(st.xi_agg >= 0) and np.all(st.dur_stats >= 0)

    def test_absorbing_chain_concentrates_gamma(self):
        regs = tuple(RegimeParams(np.zeros(0), 1.0, 8.0, np.array([0.5, 0.5]))
                     for _ in range(2))
        m = ModelParams(num_regimes=2, ar_order=0, max_duration=2,
                        pi=np.array([1.0, 0.0]),
                        trans=np.array([[1.0, 0.0], [0.0, 1.0]]),
                        regimes=regs, sample_rate=50.0)
        st = e_step(m, seq_of(np.random.default_rng(5).normal(size=30)))
        assert np.allclose(st.gamma[:, 0], 1.0)

    def test_checkpointed_equals_dense(self):
        # force the segmented sweep by a tiny store budget and compare
        import arhsmm.messages as msg
        rng = np.random.default_rng(42)
        m = random_model(rng, K=2, p=1, D=5)
        seq = seq_of(rng.normal(size=400))
        st_dense = e_step(m, seq)
        old = msg.STORE_ALL_BUDGET
        try:
            msg.STORE_ALL_BUDGET = 10  # stride becomes ceil(sqrt(T))
            st_seg = e_step(m, seq)
        finally:
            msg.STORE_ALL_BUDGET = old
        assert np.allclose(st_seg.gamma, st_dense.gamma, atol=1e-10)
        assert np.allclose(st_seg.xi_agg, st_dense.xi_agg, atol=1e-10)
        assert np.allclose(st_seg.dur_stats, st_dense.dur_stats, atol=1e-10)


class TestWeightedLeastSquares:
    def test_noiseless_ar2_exact_recovery(self):
        a_true = np.array([0.5, -0.3])
        y = np.empty(60)
        y[0], y[1] = 1.0, -0.7
        for n in range(2, 60):
            y[n] = a_true[0] * y[n - 1] + a_true[1] * y[n - 2]
        X = ar_design_matrix(y, 2)
        a_hat = weighted_least_squares(X, y[2:], np.ones(58))
        assert np.max(np.abs(a_hat - a_true)) < 1e-10

    def test_zero_weight_rows_ignored(self):
        rng = np.random.default_rng(50)
        X = rng.normal(size=(40, 3))
        y = X @ np.array([1.0, -2.0, 0.5]) + rng.normal(size=40) * 0.1
        w = np.ones(40)
        w[10:20] = 0.0
        y_poisoned = y.copy()
        y_poisoned[10:20] = 1e6
        a1 = weighted_least_squares(X, y_poisoned, w)
        a2 = weighted_least_squares(X[w > 0], y[w > 0], w[w > 0])
        assert np.allclose(a1, a2, atol=1e-8)

    def test_duplicated_rows_halved_square_weights(self):
        rng = np.random.default_rng(51)
        X = rng.normal(size=(30, 2))
        y = rng.normal(size=30)
        w = rng.uniform(0.5, 2.0, size=30)
        a1 = weighted_least_squares(X, y, w)
        X2 = np.vstack([X, X])
        y2 = np.concatenate([y, y])
        w2 = np.concatenate([w, w]) / np.sqrt(2)
        a2 = weighted_least_squares(X2, y2, w2)
        assert np.allclose(a1, a2, atol=1e-10)

    def test_too_few_positive_rows(self):
        with pytest.raises(ValueError):
            weighted_least_squares(np.ones((5, 3)), np.ones(5),
                                   np.array([1.0, 1.0, 0, 0, 0]))

    def test_rank_deficient_falls_back_to_ridge(self):
        X = np.ones((10, 2))  # two identical columns
        y = np.linspace(0, 1, 10)
        with pytest.warns(FitWarning):
            a = weighted_least_squares(X, y, np.ones(10))
        assert np.all(np.isfinite(a))


class TestUpdateSigma:
    def _stats(self, gamma, omega):
        T, K = gamma.shape
        return SuffStats(gamma=gamma, xi_agg=np.zeros((K, K)),
                         dur_stats=np.zeros((K, 1)), omega=omega,
                         elogtau=np.zeros_like(gamma), loglik=0.0)

    def test_constant_residuals(self):
        y = np.full(20, 3.0)
        st = self._stats(np.ones((20, 1)), np.ones((20, 1)))
        sig = update_sigma(st, seq_of(y), [np.zeros(0)], ar_order=0)
        assert sig[0] == pytest.approx(3.0)

    def test_halving_omega_halves_variance(self):
        rng = np.random.default_rng(52)
        y = rng.normal(size=50)
        g = np.ones((50, 1))
        s1 = update_sigma(self._stats(g, np.ones((50, 1))), seq_of(y), [np.zeros(0)], 0)
        s2 = update_sigma(self._stats(g, np.full((50, 1), 0.5)), seq_of(y), [np.zeros(0)], 0)
        assert s2[0] ** 2 == pytest.approx(s1[0] ** 2 / 2)

    def test_hand_three_sample_case(self):
        # gamma (1, .5, .25), omega (1, 2, 4), residuals y themselves
        y = np.array([1.0, 2.0, 2.0])
        gamma = np.array([[1.0], [0.5], [0.25]])
        omega = np.array([[1.0], [2.0], [4.0]])
        st = self._stats(gamma, omega)
        sig = update_sigma(st, seq_of(y), [np.zeros(0)], 0)
        expected = np.sqrt((1 * 1 * 1 + 0.5 * 2 * 4 + 0.25 * 4 * 4) / 1.75)
        assert sig[0] == pytest.approx(expected)


class TestSolveNu:
    @pytest.mark.parametrize("nu_prev", [1.0, 4.0, 9.0, 50.0])
    def test_unit_weights_shift_by_one(self, nu_prev):
        gamma = np.ones(100)
        omega = np.ones(100)
        assert solve_nu(gamma, omega, nu_prev) == pytest.approx(nu_prev + 1, abs=1e-8)

    def test_gaussian_residuals_drive_nu_upward(self):
        # Gaussian residuals: the recursion climbs monotonically toward the
        # Gaussian limit (large nu) from any moderate start
        rng = np.random.default_rng(53)
        r = rng.normal(size=50_000)
        ones = np.ones_like(r)
        nu = 20.0
        for _ in range(60):
            omega = (nu + 1) / (nu + r**2)
            new = solve_nu(ones, omega, nu)
            assert new > nu
            nu = new
        assert nu > 25.0

    def test_root_beyond_bracket_clamps_and_flags(self):
        # with unit weights the root is nu_prev + 1, so nu_prev near the
        # upper bracket end pushes the root outside and must clamp (flagged)
        with pytest.warns(FitWarning, match="clamped"):
            nu = solve_nu(np.ones(10), np.ones(10), 999.5)
        assert nu == pytest.approx(1e3)

    def test_heavy_tailed_residuals_recover_nu(self):
        # complete-data robust regression on t(4) noise recovers nu within 1.5
        rng = np.random.default_rng(54)
        n = 100_000
        noise = rng.standard_t(df=4, size=n) * 1.0
        y = np.empty(n)
        y[:2] = noise[:2]
        for i in range(2, n):
            y[i] = 0.5 * y[i - 1] - 0.3 * y[i - 2] + noise[i]
        model = supervised_fit(seq_of(y), LabelTrack(np.zeros(n, dtype=int), 50.0),
                               num_regimes=1, ar_order=2, max_duration=100)
        assert abs(model.regimes[0].nu - 4.0) < 1.5
        assert np.max(np.abs(model.regimes[0].ar_weights - [0.5, -0.3])) < 0.02


class TestMStep:
    def test_pi_from_first_slice(self):
        rng = np.random.default_rng(55)
        m = random_model(rng, K=2, p=0, D=2)
        seq = seq_of(rng.normal(size=10))
        st = e_step(m, seq)
        st.gamma[0] = [0.3, 0.7]
        new, _ = m_step(st, seq, m)
        assert np.allclose(new.pi, [0.3, 0.7])

    def test_rows_stochastic_by_construction(self):
        rng = np.random.default_rng(56)
        m = random_model(rng, K=3, p=1, D=4)
        seq = seq_of(rng.normal(size=300))
        new, _ = m_step(e_step(m, seq), seq, m)
        assert np.allclose(new.pi.sum(), 1.0)
        assert np.allclose(new.trans.sum(axis=1), 1.0)
        for reg in new.regimes:
            assert np.allclose(reg.duration_probs.sum(), 1.0)
            assert np.all(reg.duration_probs > 0)  # smoothing keeps support

    def test_degenerate_regime_frozen(self):
        rng = np.random.default_rng(57)
        m = random_model(rng, K=2, p=0, D=2)
        seq = seq_of(rng.normal(size=20))
        st = e_step(m, seq)
        st.gamma[:, 1] = 0.0
        st.gamma[:, 0] = 1.0
        new, flags = m_step(st, seq, m)
        assert any("frozen" in f for f in flags)
        assert new.regimes[1].sigma == m.regimes[1].sigma
        assert new.regimes[1].nu == m.regimes[1].nu

    def test_dirac_stats_reproduce_supervised_fit(self):
        truth = recovery_model()
        seq, path = sample_sequence(truth, 4000, seed=11)
        track = LabelTrack(path.z, seq.sample_rate)
        fitted = supervised_fit(seq, track, num_regimes=2, ar_order=2,
                                max_duration=truth.max_duration)
        gamma, xi_agg, dur, _ = _dirac_stats(track.labels, 2, truth.max_duration, 2)
        from arhsmm.learning import _tau_moments
        omega, elog = _tau_moments(fitted, seq)
        st = SuffStats(gamma=gamma, xi_agg=xi_agg, dur_stats=dur,
                       omega=omega, elogtau=elog, loglik=0.0)
        again, _ = m_step(st, seq, fitted)
        assert np.allclose(again.pi, fitted.pi)
        assert np.allclose(again.trans, fitted.trans)
        for r1, r2 in zip(again.regimes, fitted.regimes):
            assert np.allclose(r1.duration_probs, r2.duration_probs)
            assert np.allclose(r1.ar_weights, r2.ar_weights, atol=1e-6)
            assert r1.sigma == pytest.approx(r2.sigma, rel=1e-6)
            assert r1.nu == pytest.approx(r2.nu, rel=1e-3)


class TestEmFit:
    def test_monotone_trace_random_inits(self):
        rng = np.random.default_rng(58)
        for trial in range(3):
            gen = random_model(rng, K=2, p=2, D=15)
            seq, _ = sample_sequence(gen, 2000, seed=trial)
            init = random_model(rng, K=2, p=2, D=15)
            fit = em_fit(seq, init, max_iters=8, rel_tol=0.0)
            steps = np.diff(fit.loglik_trace)
            assert np.all(steps >= -1e-6)

    def test_fixed_point_after_convergence(self):
        truth = recovery_model()
        seq, _ = sample_sequence(truth, 20_000, seed=2)
        fit = em_fit(seq, truth, max_iters=80, rel_tol=1e-7)
        assert fit.converged
        again = em_fit(seq, fit.model, max_iters=3, rel_tol=0.0)
        steps = np.diff(again.loglik_trace)
        assert np.all(steps >= -1e-6)
        assert np.all(np.abs(steps) <= 0.05)  # essentially stationary

    def test_truth_init_changes_little(self):
        # truth is within sampling error of the MLE, so per-iteration gains
        # are tiny relative to scale (random inits move by percents)
        truth = recovery_model()
        seq, _ = sample_sequence(truth, 20_000, seed=3)
        fit = em_fit(seq, truth, max_iters=5, rel_tol=0.0)
        rel_steps = np.abs(np.diff(fit.loglik_trace)) / abs(fit.loglik_trace[0])
        assert np.all(rel_steps < 1e-3)

    def test_workers_match_serial(self):
        rng = np.random.default_rng(59)
        gen = random_model(rng, K=2, p=1, D=8)
        seqs = [sample_sequence(gen, 800, seed=s)[0] for s in range(3)]
        init = random_model(rng, K=2, p=1, D=8)
        f1 = em_fit(seqs, init, max_iters=4, rel_tol=0.0, workers=1)
        f2 = em_fit(seqs, init, max_iters=4, rel_tol=0.0, workers=3)
        assert np.allclose(f1.loglik_trace, f2.loglik_trace, rtol=1e-12)


class TestSupervisedFit:
    def test_recovers_generator_parameters(self):
        # short dwells so 50k samples give ~2k duration draws per regime
        truth = recovery_model()
        seq, path = sample_sequence(truth, 50_000, seed=21)
        track = LabelTrack(path.z, seq.sample_rate)
        model = supervised_fit(seq, track, num_regimes=2, ar_order=2,
                               max_duration=truth.max_duration)
        for k in range(2):
            ft, tr = model.regimes[k], truth.regimes[k]
            assert np.max(np.abs(ft.ar_weights - tr.ar_weights)) < 0.05
            assert abs(ft.sigma / tr.sigma - 1) < 0.1
            tv = 0.5 * np.abs(ft.duration_probs - tr.duration_probs).sum()
            assert tv < 0.1
            assert abs(ft.nu - tr.nu) < 1.5

    def test_pi_equals_first_label_frequencies(self):
        truth = separated_dynamics_model()
        pairs = [sample_sequence(truth, 1500, seed=s) for s in range(8)]
        seqs = [p[0] for p in pairs]
        tracks = [LabelTrack(p[1].z, 50.0) for p in pairs]
        model = supervised_fit(seqs, tracks, num_regimes=2, ar_order=2,
                               max_duration=truth.max_duration)
        firsts = np.array([t.labels[2] for t in tracks])  # first emitted sample
        expected = np.bincount(firsts, minlength=2) / len(firsts)
        assert np.allclose(model.pi, expected)

    def test_missing_regime_rejected(self):
        seq = seq_of(np.random.default_rng(60).normal(size=100))
        track = LabelTrack(np.zeros(100, dtype=int), 50.0)
        with pytest.raises(ValueError, match="absent"):
            supervised_fit(seq, track, num_regimes=2, ar_order=1, max_duration=10)

    def test_long_runs_tiled_with_self_transitions(self):
        rng = np.random.default_rng(61)
        labels = np.zeros(1000, dtype=int)
        labels[300:350] = 1
        labels[700:760] = 1
        seq = seq_of(rng.normal(size=1000))
        with pytest.warns(FitWarning, match="tiled"):
            model = supervised_fit(seq, LabelTrack(labels, 50.0), num_regimes=2,
                                   ar_order=1, max_duration=40)
        assert model.trans[0, 0] > 0  # long background runs renew in place
        gamma, xi, dur, clipped = _dirac_stats(labels, 2, 40, 1)
        assert clipped
        # 0-run of 300 -> 7 full caps + remainder 20, 7 self transitions
        assert dur.sum(axis=1)[0] == pytest.approx(xi[0, 0] + xi[1, 0] + 1)

    def test_em_from_supervised_does_not_decrease(self):
        truth = separated_dynamics_model()
        seq, path = sample_sequence(truth, 4000, seed=31)
        model = supervised_fit(seq, LabelTrack(path.z, 50.0), num_regimes=2,
                               ar_order=2, max_duration=truth.max_duration)
        start = forward(model, seq).loglik
        fit = em_fit(seq, model, max_iters=5, rel_tol=0.0)
        assert fit.loglik_trace[0] == pytest.approx(start, rel=1e-12)
        assert np.all(np.diff(fit.loglik_trace) >= -1e-6)


class TestDefaultInit:
    def _seqs(self):
        rng = np.random.default_rng(62)
        return [seq_of(rng.normal(size=600)) for _ in range(2)]

    def test_chain_structure(self):
        cfg = InitConfig(sample_rate=50.0, max_duration=100)
        m = default_unsupervised_init(self._seqs(), cfg)
        assert np.allclose(m.pi, [1.0, 0.0])
        assert np.allclose(m.trans, [[0.5, 0.5], [1.0, 0.0]])
        assert np.allclose(m.trans.sum(axis=1), 1.0)
        from arhsmm import validate_model
        assert validate_model(m).ok

    def test_burst_duration_mode_at_one_second(self):
        cfg = InitConfig(sample_rate=50.0, max_duration=100)
        m = default_unsupervised_init(self._seqs(), cfg)
        lam1 = m.regimes[1].duration_probs
        assert int(np.argmax(lam1)) + 1 == 50  # sample index nearest 1 s

    def test_burst_frequency_response_peaks_in_band(self):
        cfg = InitConfig(sample_rate=50.0, max_duration=100)
        m = default_unsupervised_init(self._seqs(), cfg)
        a = m.regimes[1].ar_weights
        freqs = np.linspace(0.1, 25.0, 2000)
        omega = 2 * np.pi * freqs / 50.0
        resp = np.abs(1.0 / (1 - sum(a[j] * np.exp(-1j * omega * (j + 1))
                                     for j in range(a.size))))
        peak = freqs[np.argmax(resp)]
        assert 11.0 <= peak <= 15.0

    def test_short_sequence_rejected(self):
        cfg = InitConfig(sample_rate=50.0, max_duration=100)
        with pytest.raises(ValueError, match="seed window"):
            default_unsupervised_init([seq_of(np.random.default_rng(0).normal(size=100))], cfg)
