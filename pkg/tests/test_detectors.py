from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from hmmquickest import (
    CalibrationError,
    ExhaustedPriorError,
    GeometricPrior,
    GsrDetector,
    ShiryaevDetector,
    TabulatedPrior,
    TrivialSolutionError,
    calibrate_threshold,
    gsr_threshold,
    run_detector,
    shiryaev_threshold,
)
from hmmquickest.experiments import ExperimentConfig
from conftest import two_state_bernoulli_pair


def direct_log_statistic(prior, log_lrs, n):
    """Independent oracle: the weighted likelihood-ratio sum evaluated
    directly in log space."""
    terms = []
    w0 = prior.pmf(0)
    if w0 > 0:
        terms.append(math.log(w0) + sum(log_lrs[:n]))
    for k in range(1, n + 1):
        terms.append(math.log(prior.pmf(k)) + sum(log_lrs[k - 1 : n]))
    m = max(terms)
    total = m + math.log(sum(math.exp(t - m) for t in terms))
    return total - math.log(prior.survival(n))


class TestShiryaevState:
    def test_initial_statistic(self):
        assert ShiryaevDetector.init(GeometricPrior(0.0, 0.2), 10).log_statistic == -math.inf
        st = ShiryaevDetector.init(GeometricPrior(0.5, 0.2), 10)
        assert abs(st.statistic - 1.0) < 1e-12
        st = ShiryaevDetector.init(GeometricPrior(0.2, 0.2), 10)
        assert abs(st.statistic - 0.25) < 1e-12

    def test_posterior_values(self):
        prior = GeometricPrior(0.5, 0.2)
        st = ShiryaevDetector.init(prior, 10)
        assert abs(st.posterior - 0.5) < 1e-12
        # drive the statistic to targeted values with synthetic increments
        st2 = st.step(math.log(99.0 / st.statistic / (prior.pmf(1) / prior.pmf(0) + 1) * prior.survival(1) / prior.survival(0)))
        assert 0.0 < st2.posterior < 1.0

    def test_flat_stream_equals_prior_odds(self):
        # uninformative likelihood: the statistic must reproduce the prior
        # posterior odds, here 2^n - 1 for rho = 1/2
        st = ShiryaevDetector.init(GeometricPrior(0.0, 0.5), 1e9)
        for n in range(1, 8):
            st = st.step(0.0)
            assert abs(st.statistic - (2**n - 1)) < 1e-9 * 2**n

    def test_recursion_matches_direct_sum(self, rng):
        priors = [
            GeometricPrior(0.0, 0.1),
            GeometricPrior(0.3, 0.25),
            TabulatedPrior(_tab_weights(), tail_ratio=0.8),
        ]
        for prior in priors:
            log_lrs = rng.normal(0.05, 0.6, size=20).tolist()
            st = ShiryaevDetector.init(prior, 1e12)
            for n in range(1, 21):
                st = st.step(log_lrs[n - 1])
                direct = direct_log_statistic(prior, log_lrs, n)
                assert abs(st.log_statistic - direct) <= 1e-9

    def test_survival_exhaustion(self):
        tab = TabulatedPrior(np.array([0.0, 0.6, 0.4]), tail_ratio=None)
        st = ShiryaevDetector.init(tab, 100.0)
        st = st.step(0.1)
        with pytest.raises(ExhaustedPriorError):
            st.step(0.1)

    def test_nonfinite_increment_rejected(self):
        st = ShiryaevDetector.init(GeometricPrior(0.0, 0.1), 10)
        with pytest.raises(ValueError):
            st.step(math.inf)


def _tab_weights():
    head = np.array([0.1, 0.2, 0.15, 0.1, 0.08])
    q = 0.8
    tail_mass = head[-1] * q / (1 - q)
    scale = (1.0 - 0.0) / (head.sum() + tail_mass)
    return head * scale


class TestThresholds:
    def test_shiryaev_analytic(self):
        assert abs(shiryaev_threshold(0.01) - 99.0) < 1e-12
        assert abs(shiryaev_threshold(0.05) - 19.0) < 1e-12

    def test_trivial_solution(self):
        with pytest.raises(TrivialSolutionError):
            shiryaev_threshold(0.5, omega0=0.6)

    def test_gsr_threshold(self):
        assert abs(gsr_threshold(0.05, 10.0, 0.0) - 180.0) < 1e-12
        with pytest.raises(ValueError):
            gsr_threshold(0.05, math.inf, 0.0)


class TestGsr:
    def test_flat_stream_counts_steps(self):
        st = GsrDetector.init(0.0, 1e9)
        for n in range(1, 7):
            st = st.step(0.0)
            assert abs(st.statistic - n) < 1e-12

    def test_mean_by_enumeration(self):
        # expected statistic under the no-change law is n plus the head start
        pair = two_state_bernoulli_pair(p=0.25, pd=(0.7, 0.4), pfa=0.15)
        from hmmquickest import filter_init, llr_increment

        for ell in (0.0, 1.0):
            n = 6
            total = 0.0
            for bits in itertools.product((0.0, 1.0), repeat=n + 1):
                obs = np.array(bits)
                pre = filter_init(pair.pre, obs[0], "pre")
                post = filter_init(pair.post, obs[0], "post")
                log_p_inf = pre.log_norm
                r = ell
                for y in obs[1:]:
                    g, pre, post = llr_increment(pre, post, y)
                    r = (1.0 + r) * math.exp(g)
                p_inf = math.exp(pre.log_norm)
                total += p_inf * r
            assert abs(total - (n + ell)) <= 1e-12

    def test_rho_limit_matches_gsr(self):
        # the Bayesian statistic scaled by rho approaches the SR statistic;
        # the gap scales with rho times the age of the dominant change
        # hypothesis, so no-change streams with steep drift pin it down
        from hmmquickest import GaussianEmission, HmmSpec, RegimePair, sample_path, stream_llr

        eye = np.array([[1.0]])
        pair = RegimePair(
            pre=HmmSpec(eye, GaussianEmission(np.array([0.0]), np.array([1.0]))),
            post=HmmSpec(eye, GaussianEmission(np.array([2.2]), np.array([1.0]))),
        )
        for ell in (0.0, 1.0):
            for seed in range(3):
                path = sample_path(pair, math.inf, 100, seed)
                log_lrs = stream_llr(pair, path.observations).increments
                rho = 1e-4
                omega0 = rho * ell
                shir = ShiryaevDetector.init(GeometricPrior(omega0, rho), 1e30)
                gsr = GsrDetector.init(ell, 1e30)
                worst = 0.0
                for g in log_lrs:
                    shir = shir.step(g)
                    gsr = gsr.step(g)
                    rel = abs(shir.statistic / rho - gsr.statistic) / gsr.statistic
                    worst = max(worst, rel)
                assert worst <= 1e-3


class TestRunDetector:
    def test_flat_stream_stop_time(self):
        # prior odds 2^n - 1 cross 3.5 at n = 2 -> 3
        det = ShiryaevDetector.init(GeometricPrior(0.0, 0.5), 3.5)
        out = run_detector(det, [0.0] * 10, 10)
        assert out.stop_time == 3
        assert not out.censored
        assert out.log_overshoot >= 0.0

    def test_never_stops_at_zero(self):
        det = ShiryaevDetector.init(GeometricPrior(0.5, 0.5), 0.5)
        assert det.statistic >= 0.5
        out = run_detector(det, [0.0] * 5, 5)
        assert out.stop_time == 1

    def test_censoring(self):
        det = GsrDetector.init(0.0, 1e9)
        out = run_detector(det, [0.0] * 10, 10)
        assert out.censored
        assert out.stop_time is None
        assert out.log_overshoot < 0.0

    def test_threshold_monotonicity(self, rng):
        log_lrs = rng.normal(0.2, 1.0, size=300).tolist()
        stops = []
        for threshold in (2.0, 5.0, 20.0, 100.0):
            det = GsrDetector.init(0.0, threshold)
            out = run_detector(det, log_lrs, 300)
            stops.append(out.stop_time if out.stop_time is not None else math.inf)
        assert all(a <= b for a, b in zip(stops, stops[1:]))

    def test_deterministic(self, rng):
        log_lrs = rng.normal(0.1, 0.8, size=100).tolist()
        det = ShiryaevDetector.init(GeometricPrior(0.0, 0.1), 30.0)
        a = run_detector(det, log_lrs, 100)
        b = run_detector(det, log_lrs, 100)
        assert a == b


class TestCalibration:
    def _config(self, reps=3000):
        pair = two_state_bernoulli_pair(p=0.2, pd=(0.75, 0.4), pfa=0.15)
        return ExperimentConfig(
            pair=pair,
            prior=GeometricPrior(0.0, 0.1),
            thresholds=(10.0,),
            reps=reps,
            horizon=150,
            seed=99,
        )

    def test_calibrated_below_analytic_and_brackets(self):
        config = self._config()
        alpha = 0.1
        result = calibrate_threshold(alpha, config, mc_budget=200_000, seed=5)
        assert result.threshold <= shiryaev_threshold(alpha) + 1e-9
        lo, hi = result.ci
        assert lo <= alpha <= hi
        assert not result.degenerate

    def test_budget_exhaustion_carries_bracket(self):
        config = self._config(reps=2000)
        with pytest.raises(CalibrationError) as err:
            calibrate_threshold(0.1, config, mc_budget=2000, seed=5)
        assert err.value.bracket is not None

    def test_degenerate_pair_flagged(self):
        # identical regimes make the false-alarm curve a deterministic step
        # function of the threshold: calibration either hits a step value
        # exactly (flagged degenerate) or reports failure with its bracket
        pair = two_state_bernoulli_pair()
        from hmmquickest import RegimePair

        same = RegimePair(pre=pair.pre, post=pair.pre)
        config = ExperimentConfig(
            pair=same,
            prior=GeometricPrior(0.0, 0.2),
            thresholds=(10.0,),
            reps=2000,
            horizon=120,
            seed=1,
        )
        result = calibrate_threshold(0.8**5, config, mc_budget=500_000, seed=7)
        assert result.degenerate
        with pytest.raises(CalibrationError) as err:
            calibrate_threshold(0.2, config, mc_budget=500_000, seed=7)
        assert err.value.bracket is not None
