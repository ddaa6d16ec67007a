"""Test statistics, analytic and empirical critical values, sample size."""

import math

import numpy as np
import pytest
from scipy.special import ndtri

from bandit_trials.engine import run_replicates
from bandit_trials.inference import (
    CriticalValue,
    Histogram,
    apply_test,
    calibrate_critical_value,
    default_histogram_edges,
    fwer_critical_value,
    sample_size,
    z_statistic,
)
from bandit_trials.policies import ArmState

from .conftest import WORKERS, two_arm


class TestZStatistic:
    def test_equal_means_give_zero(self):
        assert z_statistic(ArmState(2.0 * 8, 8), ArmState(2.0 * 5, 5), 1.0) == 0.0

    def test_pinned_value(self):
        # 0.545 / sqrt(2/58)
        z = z_statistic(ArmState(0.545 * 58, 58), ArmState(0.0, 58), 1.0)
        assert z == pytest.approx(2.934914819888305, abs=1e-5)

    def test_inverse_linear_in_sigma(self):
        arm_k, arm_0 = ArmState(3.0 * 6, 6), ArmState(1.0 * 9, 9)
        assert z_statistic(arm_k, arm_0, 2.0) == pytest.approx(
            z_statistic(arm_k, arm_0, 1.0) / 2.0)

    def test_unsampled_arm_rejected(self):
        with pytest.raises(ValueError, match="never sampled"):
            z_statistic(ArmState(), ArmState(1.0, 1), 1.0)


def mc_max_equicorrelated_quantile(K, alpha, draws, seed):
    """Monte Carlo oracle: quantile of max of K standard normals with
    pairwise correlation 1/2, built from K+1 iid normals."""
    rng = np.random.default_rng(seed)
    top = np.empty(draws)
    chunk = 1_000_000
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        e = rng.standard_normal((m, K + 1))
        z = (e[:, 1:] - e[:, :1]) / math.sqrt(2.0)
        top[done:done + m] = z.max(axis=1)
        done += m
    return float(np.quantile(top, 1 - alpha))


class TestFwerCriticalValue:
    def test_single_arm_matches_normal_quantile(self):
        c = fwer_critical_value(1, 0.05)
        assert c.value == pytest.approx(1.6449, abs=1e-3)
        assert c.value == pytest.approx(float(ndtri(0.95)), abs=1e-3)
        assert c.method == "analytic-mvn"

    def test_three_arm_value(self):
        assert fwer_critical_value(3, 0.05).value == pytest.approx(2.0621, abs=5e-3)

    def test_two_arm_against_mc_oracle(self):
        oracle = mc_max_equicorrelated_quantile(2, 0.05, 10_000_000, seed=15)
        assert fwer_critical_value(2, 0.05).value == pytest.approx(oracle, abs=5e-3)

    def test_monotone_in_k_and_alpha(self):
        values_k = [fwer_critical_value(k, 0.05).value for k in (1, 2, 3, 5, 8)]
        assert all(a < b for a, b in zip(values_k, values_k[1:]))
        values_a = [fwer_critical_value(3, a).value for a in (0.01, 0.05, 0.10, 0.20)]
        assert all(a > b for a, b in zip(values_a, values_a[1:]))

    def test_preconditions(self):
        with pytest.raises(ValueError):
            fwer_critical_value(0, 0.05)
        with pytest.raises(ValueError):
            fwer_critical_value(2, 0.0)


class TestSampleSize:
    def test_reference_designs(self):
        assert sample_size(1, 1.0, 0.545, 1.645, 0.10) == 116
        assert sample_size(3, 1.0, 0.545, 2.0621, 0.10) == 302

    def test_unit_case(self):
        # (K+1) * 2 sigma^2 (C + z_beta)^2 / delta^2 with C+z_beta = 1,
        # delta = sqrt(2): exactly 2
        assert sample_size(1, 1.0, math.sqrt(2.0), 1.0, 0.5) == 2

    def test_inverse_square_scaling_before_rounding(self):
        z_beta = float(ndtri(0.90))
        raw = 2 * 2 * (1.645 + z_beta) ** 2 / (2 * 0.545) ** 2
        assert sample_size(1, 1.0, 2 * 0.545, 1.645, 0.10) == math.ceil(raw - 1e-9)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            sample_size(1, 1.0, 0.0, 1.645, 0.1)
        with pytest.raises(ValueError):
            sample_size(1, 1.0, 0.5, 1.645, 1.0)


class TestCalibration:
    def test_refuses_non_null_scenario(self, table995):
        scenario = two_arm("GI", 0.545, "H1")
        with pytest.raises(ValueError, match="global-null"):
            calibrate_critical_value(scenario, table995, 1, 200, 0.05)

    def test_requires_enough_replicates(self):
        scenario = two_arm("FR", 0.0, "H0", T=6)
        with pytest.raises(ValueError, match="M >= 100"):
            calibrate_critical_value(scenario, None, 1, 50, 0.05)

    def test_nearest_rank_small_sample(self):
        scenario = two_arm("CB", 0.0, "H0", T=8)
        critical, summary = calibrate_critical_value(scenario, None, 16, 100, 0.05)
        assert critical.value == float(np.sort(summary.values)[94])
        assert critical.method == "empirical-percentile"

    def test_provenance(self):
        scenario = two_arm("CB", 0.0, "H0", T=8)
        critical, _ = calibrate_critical_value(scenario, None, 17, 100, 0.05)
        assert critical.provenance["M"] == 100
        assert critical.provenance["master_seed"] == 17
        assert critical.provenance["policy"] == "CB"

    def test_fr_calibration_recovers_normal_quantile(self):
        scenario = two_arm("FR", 0.0, "H0")
        critical, summary = calibrate_critical_value(scenario, None, 18, 10_000, 0.05,
                                                     workers=WORKERS)
        assert critical.value == pytest.approx(1.645, abs=0.05)
        assert summary.mean == pytest.approx(0.0, abs=0.05)
        assert summary.sd == pytest.approx(1.0, abs=0.05)

    def test_self_consistency_on_fresh_seeds(self):
        scenario = two_arm("CB", 0.0, "H0", T=40)
        critical, _ = calibrate_critical_value(scenario, None, 19, 2000, 0.05,
                                               workers=WORKERS)
        fresh = run_replicates(scenario, None, 20, 2000, workers=WORKERS)
        rate = float(np.mean([r.z.zmax > critical.value for r in fresh]))
        assert rate <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / 2000)

    def test_histogram_binning(self):
        scenario = two_arm("CB", 0.0, "H0", T=8)
        _, summary = calibrate_critical_value(scenario, None, 21, 200, 0.05)
        hist = summary.histogram
        assert hist.counts.sum() == 200
        assert math.isinf(hist.edges[0]) and math.isinf(hist.edges[-1])
        interior = np.diff(hist.edges[1:-1])
        assert np.allclose(interior, 0.2)


class TestApplyTest:
    def make_record(self, z_values):
        scenario = two_arm("FR", 0.0, "H0", T=len(z_values) + 1)
        from bandit_trials.engine import run_trial
        record = run_trial(scenario, None, seed=22)
        from bandit_trials.inference import ZVector
        object.__setattr__(record, "z", ZVector(np.asarray(z_values, dtype=float)))
        return record

    def test_below_threshold(self):
        record = self.make_record([1.0])
        decision = apply_test(record, CriticalValue(1.645, "fixed", 0.05))
        assert decision.per_arm_reject == (False,)
        assert not decision.global_reject

    def test_above_threshold(self):
        record = self.make_record([1.81])
        decision = apply_test(record, 1.645)
        assert decision.per_arm_reject == (True,)
        assert decision.global_reject

    def test_componentwise(self):
        record = self.make_record([0.5, 2.2, 1.0])
        decision = apply_test(record, 2.062)
        assert decision.per_arm_reject == (False, True, False)
        assert decision.global_reject


class TestCriticalValueType:
    def test_validation(self):
        with pytest.raises(ValueError):
            CriticalValue(1.0, "guess", 0.05)
        with pytest.raises(ValueError):
            CriticalValue(1.0, "fixed", 1.5)
        with pytest.raises(ValueError):
            CriticalValue(float("inf"), "fixed", 0.05)

    def test_histogram_default_edges(self):
        edges = default_histogram_edges()
        assert edges[1] == -6.0 and edges[-2] == 6.0
        hist = Histogram.of(np.array([-100.0, 0.0, 100.0]))
        assert hist.counts[0] == 1 and hist.counts[-1] == 1
