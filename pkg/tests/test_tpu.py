import math

import numpy as np
import pytest

from fpplab import InvalidArgument
from fpplab.phasecore import TWO_PI, AbsolutePhaseMap, PhaseMap, wrap
from fpplab.tpu import (FrequencySet, FringeOrderMap, df_order_error_rate, order_of, round_order,
                        unit_absolute, unwrap_hierarchical, unwrap_two_freq)


def arr(v):
    return np.array([[v]], dtype=float)


class TestFrequencySet:
    def test_default_and_ratios(self):
        f = FrequencySet()
        assert f.periods == (1, 4, 16, 64) and f.ratios == [4, 4, 4] and f.highest == 64

    @pytest.mark.parametrize("periods", [(2, 4), (1,), (1, 3, 4), (1, 1), (1, 6, 9)])
    def test_invalid(self, periods):
        with pytest.raises(InvalidArgument):
            FrequencySet(periods)


class TestTwoFreq:
    def test_zero(self):
        k, phi = unwrap_two_freq(arr(0.0), arr(0.0), 64)
        assert k.values[0, 0] == 0 and phi.values[0, 0] == 0

    def test_arithmetic_example(self):
        true_high = 6.4
        phi_h = wrap(true_high)
        assert phi_h == pytest.approx(0.116815, abs=1e-6)
        k, phi = unwrap_two_freq(arr(0.1), arr(phi_h), 64)
        # hand value: (64*0.1 - 0.116815)/2pi = 6.283185/2pi = 1
        assert (64 * 0.1 - phi_h) / TWO_PI == pytest.approx(1.0, abs=1e-6)
        assert k.values[0, 0] == 1
        assert phi.values[0, 0] == pytest.approx(6.4, abs=1e-12)
        assert phi.period_number == 64

    def test_size_mismatch(self):
        with pytest.raises(InvalidArgument):
            unwrap_two_freq(np.zeros((2, 2)), np.zeros((2, 3)), 4)

    def test_bad_ratio(self):
        with pytest.raises(InvalidArgument):
            unwrap_two_freq(arr(0), arr(0), 1)

    def test_clamping_reports_out_of_range(self):
        k, _ = unwrap_two_freq(np.array([[TWO_PI + 0.5, -0.5]]), np.array([[0.0, 0.0]]), 4)
        assert k.values.tolist() == [[4, 0]]
        k, _ = unwrap_two_freq(np.array([[TWO_PI + 1.5, -0.5]]), np.array([[-0.1, 0.1]]), 4)
        assert k.values.tolist() == [[4, 0]]
        assert k.unclamped.tolist() == [[5, 0]]
        assert k.out_of_range == 1

    def test_last_half_fringe_has_order_ratio(self):
        # projector phase just below 2*pi*ratio wraps negative, so k = ratio
        true = TWO_PI * 4 - 0.2
        k, phi = unwrap_two_freq(arr(true / 4), arr(wrap(true)), 4)
        assert k.values[0, 0] == 4
        assert phi.values[0, 0] == pytest.approx(true)

    def test_injected_error_flips_order(self, rng):
        # order is off by one exactly when |ratio*e_low - e_high| > pi
        n = 20000
        true = rng.uniform(0, TWO_PI * 64, n)
        e_low = rng.normal(0, 0.04, n)
        e_high = rng.normal(0, 0.3, n)
        phi_h = wrap(true + e_high)
        k, _ = unwrap_two_freq((true / 64 + e_low)[None], phi_h[None], 64)
        k_true = np.rint((true + e_high - phi_h) / TWO_PI)
        wrong = k.unclamped[0] != k_true
        predicted = np.abs(64 * e_low - e_high) > math.pi
        inside = (k_true >= 1) & (k_true <= 62)
        assert np.array_equal(wrong[inside], predicted[inside])
        # exact offset: round((ratio*e_low - e_high)/2pi)
        offset = np.rint((64 * e_low - e_high) / TWO_PI)
        np.testing.assert_array_equal((k.unclamped[0] - k_true)[inside], offset[inside])


class TestHierarchical:
    def test_two_element_chain_is_dftpu(self, rng):
        true = rng.uniform(0, TWO_PI * 64, (6, 9))
        low = wrap(true / 64)
        high = wrap(true)
        mf = unwrap_hierarchical(FrequencySet((1, 64)), [low, high])
        _, df = unwrap_two_freq(unit_absolute(low), high, 64)
        np.testing.assert_array_equal(mf.values, df.values)

    def test_noiseless_exact(self, rng):
        true = rng.uniform(0, TWO_PI * 64, (20, 20))
        maps = [PhaseMap(wrap(true * p / 64), p) for p in (1, 4, 16, 64)]
        out = unwrap_hierarchical([1, 4, 16, 64], maps)
        assert np.max(np.abs(out.values - true)) < 1e-9

    def test_all_zero(self):
        maps = [np.zeros((3, 3))] * 4
        np.testing.assert_array_equal(unwrap_hierarchical(FrequencySet(), maps).values, 0)

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            unwrap_hierarchical(FrequencySet(), [np.zeros((3, 3))] * 3)
        with pytest.raises(InvalidArgument):
            unwrap_hierarchical(FrequencySet((1, 4)), [np.zeros((3, 3)), np.zeros((3, 4))])


class TestRounding:
    @pytest.mark.parametrize("soft,expect", [(31.4, 31), (64.0, 63), (2.5, 2), (3.5, 4), (-0.3, 0)])
    def test_examples(self, soft, expect):
        k = round_order(FringeOrderMap(arr(soft), "soft"), 64)
        assert k.values[0, 0] == expect and k.representation == "integer"

    def test_order_of(self):
        phi = wrap(np.array([[7.0, 20.0]]))
        np.testing.assert_array_equal(order_of(AbsolutePhaseMap(np.array([[7.0, 20.0]]), 4), phi), [[1, 3]])

    def test_unknown_representation(self):
        with pytest.raises(InvalidArgument):
            FringeOrderMap(arr(0), "fuzzy")


class TestNoiseThreshold:
    def test_monotone_in_sigma(self):
        sigmas = [0.0, 0.01, 0.02, 0.04, 0.08]
        rates = [df_order_error_rate(s, 64, 40000, seed=3)["error_rate"] for s in sigmas]
        n = 40000
        for a, b in zip(rates, rates[1:]):
            # allow a 95% one-sided Monte-Carlo margin
            tol = 1.645 * math.sqrt(max(a, 1.0 / n) * (1 - a) / n) * math.sqrt(2)
            assert b >= a - tol
        assert rates[0] == 0.0 and rates[-1] > 0.2

    def test_raw_and_clamped_rates(self):
        r = df_order_error_rate(math.pi / 32, 64, 20000, seed=1)
        assert r["raw_error_rate"] >= r["error_rate"] > 0.01
