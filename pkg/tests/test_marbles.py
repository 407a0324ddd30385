import itertools
import json
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from grwcount import marbles, qmath
from grwcount.marbles import (
    EnsembleSpec,
    GrwParameters,
    MarbleAmplitudes,
    branch_class_weight,
    count_distribution,
    prob_all_in,
    prob_not_all_in,
)


def spec_a2(n, a2, **grw):
    return EnsembleSpec(n, MarbleAmplitudes.from_a2(a2), GrwParameters(**grw))


def spec_b2(n, b2):
    return EnsembleSpec(n, MarbleAmplitudes.from_b2(b2))


def tensor_weights(n, a2):
    """Brute force: expand (a|in> + b|out>)^(x n) and bin |coeff|^2 by k."""
    single = np.array([math.sqrt(a2), math.sqrt(1 - a2)])  # index 0 = in
    state = np.array([1.0])
    for _ in range(n):
        state = np.kron(state, single)
    out = np.zeros(n + 1)
    for idx, amp in enumerate(state):
        k = n - bin(idx).count("1")
        out[k] += amp * amp
    return out


class TestAmplitudes:
    def test_sum_to_one(self):
        amp = MarbleAmplitudes.from_b2(0.1)
        assert amp.a2.value + amp.b2.value == pytest.approx(1.0, abs=1e-15)

    def test_a2_may_not_vanish(self):
        with pytest.raises(ValueError):
            MarbleAmplitudes.from_b2(1.0)

    def test_tail_free_flag(self):
        assert MarbleAmplitudes.tail_free().is_tail_free
        assert MarbleAmplitudes.from_a2(1.0).is_tail_free

    def test_extreme_tail_keeps_a2_below_one(self):
        amp = MarbleAmplitudes.from_log10_b2(-1e15)
        assert not amp.a2.is_one

    def test_default_hit_rate(self):
        assert GrwParameters().hit_rate == pytest.approx(1e8)

    def test_nonpositive_parameters(self):
        with pytest.raises(ValueError):
            GrwParameters(lambda_per_nucleon=0.0)

    def test_big_counts_from_strings(self):
        s = EnsembleSpec("1e53", MarbleAmplitudes.from_b2(0.1))
        assert s.n == 10**53
        assert EnsembleSpec("100000000000000000000000000000000000000000000000000001",
                            MarbleAmplitudes.from_b2(0.1)).n == 10**53 + 1
        with pytest.raises(ValueError):
            EnsembleSpec(0, MarbleAmplitudes.from_b2(0.1))


class TestBranchWeights:
    def test_two_marble_cross_terms(self):
        assert branch_class_weight(spec_a2(2, 0.9), 1).value == pytest.approx(0.18, rel=1e-14)

    def test_all_in_cube(self):
        s = spec_a2(3, 0.9)
        assert branch_class_weight(s, 3).value == pytest.approx(float(Fraction(729, 1000)), rel=1e-14)
        assert branch_class_weight(s, 3) == qmath.power(s.amplitudes.a2, 3)

    def test_tail_free(self):
        s = EnsembleSpec(7, MarbleAmplitudes.tail_free())
        assert branch_class_weight(s, 7).is_one
        assert all(branch_class_weight(s, k).is_zero for k in range(7))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            branch_class_weight(spec_a2(3, 0.5), 4)

    @pytest.mark.parametrize("n", range(1, 13))
    def test_tensor_expansion_oracle(self, n):
        a2 = 0.37 + 0.05 * n
        brute = tensor_weights(n, a2)
        s = spec_a2(n, a2)
        got = np.array([branch_class_weight(s, k).value for k in range(n + 1)])
        np.testing.assert_allclose(got, brute, rtol=0, atol=1e-12)

    def test_masks(self):
        s = spec_a2(3, 0.9)
        total = sum(marbles.branch_outcome(s, m).log_weight.value for m in range(8))
        assert total == pytest.approx(1.0, abs=1e-15)
        b = marbles.branch_outcome(s, 0b101)
        assert b.k_in == 2 and b.log_weight.value == pytest.approx(0.081, rel=1e-14)

    def test_mask_population_checked(self):
        with pytest.raises(ValueError):
            marbles.BranchOutcome(k_in=1, log_weight=qmath.ONE, in_mask=0b11)


class TestProbabilities:
    def test_cube(self):
        s = spec_b2(3, 0.1)
        assert prob_all_in(s).value == pytest.approx(0.729, rel=1e-14)
        assert prob_not_all_in(s).value == pytest.approx(0.271, rel=1e-13)
        assert prob_all_in(s) == branch_class_weight(s, 3)

    def test_single_marble(self):
        assert prob_not_all_in(spec_b2(1, 0.25)).value == pytest.approx(0.25, rel=1e-14)

    def test_tail_free(self):
        s = EnsembleSpec(10**9, MarbleAmplitudes.tail_free())
        assert prob_all_in(s).is_one and prob_not_all_in(s).is_zero

    def test_universe(self):
        s = EnsembleSpec(10**53, MarbleAmplitudes.from_log10_b2(-1e15))
        p_in = prob_all_in(s)
        assert not p_in.is_one
        # log10 P = -n b2 / ln10 -> loglog = 53 - 1e15 - log10(ln10)
        assert p_in.loglog == pytest.approx(53 - 1e15 - qmath.LOG10_LN10, abs=0.2)
        assert prob_not_all_in(s).log10_value == pytest.approx(-1e15 + 53, abs=1.0)

    @settings(max_examples=200)
    @given(st.integers(1, 10**6), st.floats(1e-12, 0.5))
    def test_consistency(self, n, b2):
        s = spec_b2(n, b2)
        a, b = prob_all_in(s).value, prob_not_all_in(s).value
        if a > 1e-300 and b > 1e-300:
            assert abs(a + b - 1) < 1e-12


class TestThreshold:
    def test_half(self):
        expected = float(mpmath.log(mpmath.mpf("0.5")) / mpmath.log(mpmath.mpf("0.9")))
        assert marbles.anomaly_threshold_n(0.5, 0.1) == pytest.approx(expected, rel=1e-13)
        assert expected == pytest.approx(6.5788, abs=1e-4)

    def test_universe_inverse(self):
        tau = qmath.from_log10(-1e15 + 53)
        b2 = qmath.from_log10(-1e15)
        assert marbles.log10_anomaly_threshold_n(tau, b2) == pytest.approx(53, abs=0.1)

    def test_small_regime_matches_ratio(self):
        for tau, b2 in [(1e-9, 1e-12), (1e-8, 1e-20), (3e-7, 2e-9)]:
            assert marbles.anomaly_threshold_n(tau, b2) == pytest.approx(tau / b2, rel=1e-6)

    def test_tau_to_zero(self):
        assert marbles.anomaly_threshold_n(1e-200, 0.1) < 1e-195

    @pytest.mark.parametrize("tau,b2", [(0.0, 0.1), (1.0, 0.1), (0.5, 0.0), (0.5, 1.0)])
    def test_domain(self, tau, b2):
        with pytest.raises(ValueError):
            marbles.anomaly_threshold_n(tau, b2)

    def test_inverse_of_max_tau(self):
        b2 = qmath.from_real(1e-3)
        for n in (1, 10, 1234, 10**6):
            tau = marbles.max_tau_for_n(n, b2)
            assert marbles.anomaly_threshold_n(tau, b2) == pytest.approx(n, rel=1e-9)

    def test_max_tau(self):
        assert marbles.max_tau_for_n(1, qmath.from_real(0.2)).value == pytest.approx(0.2)
        assert marbles.max_tau_for_n(3, qmath.from_real(0.1)).value == pytest.approx(0.271)
        got = marbles.max_tau_for_n(10**53, qmath.from_log10(-1e15))
        assert got.log10_value == pytest.approx(-(1e15 - 53), abs=1.0)


class TestCountDistribution:
    def test_two(self):
        d = count_distribution(spec_a2(2, 0.9)).as_dict()
        assert d == pytest.approx({2: 0.81, 1: 0.18, 0: 0.01}, rel=1e-13)

    def test_tail_free(self):
        d = count_distribution(EnsembleSpec(5, MarbleAmplitudes.tail_free()))
        assert d[5].is_one
        assert d.total() == 1.0

    def test_fair(self):
        d = count_distribution(spec_a2(4, 0.5)).as_dict()
        assert d == pytest.approx({k: math.comb(4, k) / 16 for k in range(5)}, rel=1e-14)

    @pytest.mark.parametrize("n", [1, 7, 19, 30])
    def test_exact_rational_normalization(self, n):
        a2 = Fraction(3, 7)
        exact = [math.comb(n, k) * a2**k * (1 - a2) ** (n - k) for k in range(n + 1)]
        assert sum(exact) == 1
        d = count_distribution(spec_a2(n, float(a2)))
        np.testing.assert_allclose(d.probabilities(), [float(x) for x in exact], rtol=1e-12, atol=1e-300)

    @pytest.mark.parametrize("n,b2", [(1000, 0.3), (10**5, 1e-3), (10**6, 0.5)])
    def test_normalized(self, n, b2):
        assert count_distribution(spec_b2(n, b2)).normalization_error() < 1e-9

    def test_matches_scipy_pmf(self):
        d = count_distribution(spec_a2(500, 0.3))
        np.testing.assert_allclose(d.probabilities(), stats.binom.pmf(np.arange(501), 500, 0.3),
                                   rtol=1e-9, atol=1e-300)

    def test_dense_guard(self):
        with pytest.raises(MemoryError):
            count_distribution(spec_b2(10**7, 0.1))

    def test_sparse_astronomical(self):
        s = EnsembleSpec(10**53, MarbleAmplitudes.from_log10_b2(-1e15))
        d = count_distribution(s, ks=[10**53, 10**53 - 1])
        assert d[10**53] == prob_all_in(s)
        assert d[10**53 - 1].log10_value == pytest.approx(-1e15 + 53, abs=1.0)
        assert marbles.window_normalization_error(s) < 1e-9


class TestMonteCarlo:
    def test_cap(self):
        with pytest.raises(marbles.MonteCarloLimitError):
            marbles.simulate_reduction(spec_b2(10**7 + 1, 0.1), seed=1)

    def test_bad_t_max(self):
        with pytest.raises(ValueError):
            marbles.simulate_reduction(spec_b2(3, 0.1), seed=1, t_max=0.0)

    def test_determinism(self):
        s = spec_a2(50, 0.6)
        a = marbles.simulate_reduction(s, seed=9, index=3)
        b = marbles.simulate_reduction(s, seed=9, index=3)
        assert np.array_equal(a.hit_times, b.hit_times) and np.array_equal(a.outcomes, b.outcomes)
        c = marbles.simulate_reduction(s, seed=9, index=4)
        assert not np.array_equal(a.hit_times, c.hit_times)

    def test_ensemble_matches_single_path(self):
        s = spec_a2(30, 0.6)
        ens = marbles.simulate_ensemble(s, 40, seed=5, t_max=2e-8, start_index=100)
        for j in range(40):
            tr = marbles.simulate_reduction(s, seed=5, t_max=2e-8, index=100 + j)
            assert tr.total_reduction_time == ens.total_reduction_time[j]
            assert tr.final_k_in == ens.final_k_in[j]
            assert tr.unresolved_count == ens.unresolved_count[j]

    def test_split_ranges_concatenate(self):
        s = spec_a2(8, 0.4)
        whole = marbles.simulate_ensemble(s, 60, seed=2)
        parts = [marbles.simulate_ensemble(s, 20, seed=2, start_index=i) for i in (0, 20, 40)]
        assert np.array_equal(whole.final_k_in, np.concatenate([p.final_k_in for p in parts]))

    def test_unresolved_reported(self):
        s = spec_a2(1000, 0.5)
        tr = marbles.simulate_reduction(s, seed=3, t_max=1e-9)
        assert tr.unresolved_count > 0
        assert tr.total_reduction_time == math.inf
        assert not tr.all_resolved

    def test_enumeration_coherence(self):
        s = spec_a2(200, 0.55)
        for i in range(50):
            tr = marbles.simulate_reduction(s, seed=11, index=i)
            assert tr.all_resolved
            assert set(np.unique(tr.outcomes)) <= {marbles.IN, marbles.OUT}
            assert tr.final_k_in == np.count_nonzero(tr.outcomes == marbles.IN)
            assert tr.total_reduction_time == tr.hit_times.max()

    def test_no_tail_never_out(self):
        s = EnsembleSpec(1000, MarbleAmplitudes.from_a2(1.0))
        assert all(marbles.simulate_reduction(s, 1, index=i).final_k_in == 1000 for i in range(20))

    def test_extreme_tail_never_fires(self):
        s = EnsembleSpec(10**5, MarbleAmplitudes.from_log10_b2(-1e15))
        ens = marbles.simulate_ensemble(s, 20, seed=4)
        assert np.all(ens.final_k_in == 10**5)

    def test_single_marble_mean_hit_time(self):
        s = spec_a2(1, 0.9)
        ens = marbles.simulate_ensemble(s, 10**5, seed=21, t_max=1.0)
        t = ens.total_reduction_time
        assert np.all(ens.unresolved_count == 0)
        se = t.std(ddof=1) / math.sqrt(t.size)
        assert abs(t.mean() - 1e-8) < 3 * se

    def test_harmonic(self):
        assert marbles.harmonic_number(10) == pytest.approx(7381 / 2520, rel=1e-15)
        for n in (65, 1000, 10**5):
            assert marbles.harmonic_number(n) == pytest.approx(
                float(mpmath.harmonic(n)), rel=1e-14)

    @pytest.mark.parametrize("n", [5, 20, 100])
    def test_ks_against_binomial(self, n):
        samples = 10**6
        ens = marbles.simulate_ensemble(spec_a2(n, 0.7), samples, seed=100 + n)
        counts = np.bincount(ens.final_k_in, minlength=n + 1)
        ecdf = np.cumsum(counts) / samples
        ks = np.max(np.abs(ecdf - stats.binom.cdf(np.arange(n + 1), n, 0.7)))
        assert ks < 1.9495 / math.sqrt(samples)

    def test_stats_small(self):
        st_ = marbles.reduction_time_stats(spec_a2(1, 0.5), 20000, seed=3)
        assert abs(st_["mean"] - 1e-8) < 3 * st_["stderr"]
        assert st_["q50"] == pytest.approx(math.log(2) * 1e-8, rel=0.05)
        with pytest.raises(ValueError):
            marbles.reduction_time_stats(spec_a2(1, 0.5), 10, seed=3)


class TestSerialization:
    def test_round_trip(self):
        s = EnsembleSpec(10**53, MarbleAmplitudes.from_log10_b2(-1e15))
        obj = json.loads(json.dumps(marbles.spec_to_json(s, t_max=1.0)))
        assert obj["n"] == str(10**53)
        back, t_max = marbles.spec_from_json(obj)
        assert back == s and t_max == 1.0

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            marbles.spec_from_json({"n": 3, "log10_b2": -1, "bogus": 1})

    def test_csv(self):
        ens = marbles.simulate_ensemble(spec_a2(4, 0.5), 3, seed=1, start_index=7)
        lines = ens.to_csv().splitlines()
        assert lines[0] == "seed_index,total_reduction_time,final_k_in,unresolved_count"
        assert lines[1].startswith("7,") and len(lines) == 4
