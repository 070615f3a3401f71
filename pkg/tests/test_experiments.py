from __future__ import annotations

import math

import numpy as np
import pytest

from hmmquickest import (
    ConfigError,
    EstimationError,
    GeometricPrior,
    McEstimate,
    OperatingCharacteristic,
    RegimePair,
    ThresholdRow,
    emit_report,
    estimate_add,
    estimate_conditional_add,
    estimate_pfa,
    exact_oracle,
    run_example,
    shiryaev_threshold,
    simulate_grid,
    slln_diagnostic,
    two_state_gaussian_loglr,
)
from hmmquickest.experiments import ExperimentConfig
from conftest import (
    scalar_ar_pair,
    scalar_bernoulli_pair,
    two_state_bernoulli_pair,
    two_state_gaussian_pair,
)


def bernoulli_config(**kwargs):
    defaults = dict(
        pair=two_state_bernoulli_pair(p=0.25, pd=(0.75, 0.4), pfa=0.15),
        prior=GeometricPrior(0.0, 0.15),
        thresholds=(8.0,),
        reps=4000,
        horizon=8,
        seed=321,
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


class TestEstimatePfa:
    def test_unreachable_threshold_scores_survival_at_horizon(self):
        config = bernoulli_config(thresholds=(1e12,), horizon=25)
        est = estimate_pfa(config)
        expect = config.prior.survival(25)
        assert est.censored_count == config.reps
        assert abs(est.mean - expect) < 1e-12

    def test_analytic_threshold_respects_alpha(self):
        alpha = 0.1
        config = bernoulli_config(thresholds=(shiryaev_threshold(alpha),), horizon=150, reps=20_000)
        est = estimate_pfa(config)
        assert est.mean <= alpha + 3.0 * est.std_error

    def test_matches_exact_oracle(self):
        config = bernoulli_config(reps=40_000)
        oracle = exact_oracle(config)
        est = estimate_pfa(config)
        assert abs(est.mean - oracle.pfa_exact) <= 3.0 * est.std_error

    def test_restart_mode_rejected(self):
        config = bernoulli_config(llr_mode="restart")
        with pytest.raises(ConfigError):
            estimate_pfa(config)


class TestEstimateAdd:
    def test_delay_floor_with_immediate_change(self):
        # almost all prior mass at zero and a very detectable change: the
        # delay is short but the stopping time is at least 1
        pair = two_state_gaussian_pair(pre_means=(0.0, 0.5), post_means=(6.0, 6.5))
        config = ExperimentConfig(
            pair=pair,
            prior=GeometricPrior(0.99, 0.5),
            thresholds=(50.0,),
            reps=4000,
            horizon=60,
            seed=5,
        )
        add = estimate_add(config, moments=(1,))[1]
        # stopping times are at least 1, so the only zero delays come from
        # the small prior mass with a change at time 1 detected immediately
        assert 0.97 <= add.mean <= 1.5
        assert add.censored_count == 0

    def test_degenerate_gsr_all_censored(self):
        pair = two_state_bernoulli_pair()
        same = RegimePair(pre=pair.pre, post=pair.pre)
        config = ExperimentConfig(
            pair=same,
            prior=GeometricPrior(0.0, 0.2),
            detector_kind="gsr",
            thresholds=(1e9,),
            reps=500,
            horizon=100,
            seed=9,
        )
        with pytest.raises(EstimationError):
            estimate_add(config, moments=(1,))
        pfa = estimate_pfa(config)
        assert pfa.censored_count == 500

    def test_matches_exact_oracle(self):
        config = bernoulli_config(reps=40_000)
        oracle = exact_oracle(config)
        add = estimate_add(config, moments=(1, 2))
        for m in (1, 2):
            assert abs(add[m].mean - oracle.add_exact[m]) <= 3.0 * add[m].std_error + 1e-12

    def test_jensen_consistency(self):
        config = bernoulli_config(horizon=60, thresholds=(12.0,))
        add = estimate_add(config, moments=(1, 2))
        assert add[2].mean >= add[1].mean ** 2 - 1e-9

    def test_conditional_add_close_to_fresh_run(self):
        config = bernoulli_config(horizon=120, thresholds=(30.0,), reps=6000)
        cond = estimate_conditional_add(config)
        assert cond.mean >= 1.0
        assert cond.count + cond.censored_count == config.reps


class TestExactOracle:
    def test_hand_computed_single_state_horizon_one(self):
        # d = 1, one step: everything is computable with pencil and paper
        pair = scalar_bernoulli_pair(p_pre=0.2, p_post=0.6)
        rho = 0.25
        config = ExperimentConfig(
            pair=pair,
            prior=GeometricPrior(0.0, rho),
            thresholds=(0.9,),
            reps=10,
            horizon=1,
            seed=1,
        )
        res = exact_oracle(config)
        # statistic after one observation: (rho/(1-rho)) * lr(y)
        lr = {1.0: 0.6 / 0.2, 0.0: 0.4 / 0.8}
        stat = {y: rho / (1 - rho) * v for y, v in lr.items()}
        stops = {y: stat[y] >= 0.9 for y in (0.0, 1.0)}
        assert stops[1.0] and not stops[0.0]
        # under no change, P(Y1 = 1) = 0.2 (states d=1): survival weights
        p1 = 0.2
        expected_pfa = p1 * (1 - rho) + (1 - p1) * (1 - rho)  # stopped at 1 vs censored at 1
        assert abs(res.pfa_exact - expected_pfa) < 1e-12
        assert abs(res.stop_pmf[1] - p1) < 1e-12
        assert abs(res.censored_mass - (1 - p1)) < 1e-12
        # delay contributions: only the stopped sequence, change at 0 or 1
        w0, w1 = 0.0, rho
        p_k1 = 0.2 * 0.6  # y0 under pre stationary... d=1: p(y0)=P(y0), y1 under post
        # conditioning mass = sum over k<=1 of pmf(k) * P_k(stopped seq)
        assert res.conditioning_mass > 0

    def test_huge_threshold_gives_pure_survival_mass(self):
        config = bernoulli_config(thresholds=(1e15,))
        res = exact_oracle(config, threshold=1e15)
        assert abs(res.pfa_exact - config.prior.survival(config.horizon)) < 1e-12
        assert abs(res.censored_mass - 1.0) < 1e-12

    def test_randomized_configs_agree_with_mc(self, rng):
        for trial in range(3):
            p = float(rng.uniform(0.15, 0.35))
            pd = (float(rng.uniform(0.6, 0.85)), float(rng.uniform(0.3, 0.5)))
            pfa_p = float(rng.uniform(0.08, 0.2))
            config = ExperimentConfig(
                pair=two_state_bernoulli_pair(p=p, pd=pd, pfa=pfa_p),
                prior=GeometricPrior(0.0, float(rng.uniform(0.1, 0.3))),
                thresholds=(float(rng.uniform(3.0, 15.0)),),
                reps=30_000,
                horizon=8,
                seed=int(rng.integers(1, 2**31)),
            )
            oracle = exact_oracle(config)
            pfa = estimate_pfa(config)
            add = estimate_add(config, moments=(1,))
            assert abs(pfa.mean - oracle.pfa_exact) <= 3.0 * pfa.std_error
            assert abs(add[1].mean - oracle.add_exact[1]) <= 3.0 * add[1].std_error + 1e-12

    def test_probability_tables_consistent(self):
        config = bernoulli_config()
        res = exact_oracle(config)
        # the stop pmf and the stopped-before table agree
        for k in range(1, config.horizon + 2):
            assert abs(res.p_stop_before[k] - res.stop_pmf[:k].sum()) < 1e-12
        assert abs(res.stop_pmf.sum() + res.censored_mass - 1.0) < 1e-12

    def test_requires_bernoulli(self):
        config = ExperimentConfig(
            pair=two_state_gaussian_pair(),
            prior=GeometricPrior(0.0, 0.1),
            thresholds=(5.0,),
            reps=10,
            horizon=5,
            seed=1,
        )
        with pytest.raises(ValueError, match="Bernoulli"):
            exact_oracle(config)

    def test_size_cap(self):
        config = bernoulli_config(horizon=40)
        with pytest.raises(ValueError, match="cap"):
            exact_oracle(config)

    def test_gsr_oracle_runs(self):
        config = bernoulli_config(detector_kind="gsr", thresholds=(6.0,))
        res = exact_oracle(config)
        est = estimate_pfa(config)
        assert abs(est.mean - res.pfa_exact) <= 3.0 * est.std_error


class TestSlln:
    def test_huge_epsilon_settles_immediately(self):
        pair = two_state_gaussian_pair()
        diag = slln_diagnostic(pair, epsilon=100.0, n_max=50, reps=200, seed=1)
        assert diag.tau_quantiles[0.99] == 0.0
        assert diag.non_settled_fraction == 0.0

    def test_tiny_epsilon_never_settles(self):
        pair = two_state_gaussian_pair()
        diag = slln_diagnostic(pair, epsilon=1e-8, n_max=50, reps=200, seed=2)
        assert diag.non_settled_fraction > 0.99

    def test_survival_curve_nonincreasing(self):
        pair = two_state_gaussian_pair()
        diag = slln_diagnostic(pair, epsilon=0.15, n_max=150, reps=300, seed=3)
        assert np.all(np.diff(diag.p_tau_gt) <= 1e-12)
        assert diag.p_tau_gt[-1] < diag.p_tau_gt[0]


class TestExamples:
    def test_two_state_recursion_matches_filter(self):
        result = run_example(2, {"reps": 200, "horizon": 60, "thresholds": (20.0,)})
        assert result.checks["recursion_filter_max_rel_diff"] <= 1e-9

    def test_example3_kl_closed_form(self):
        result = run_example(3, {"reps": 200, "horizon": 60, "thresholds": (20.0,)})
        assert result.checks["kl_rel_err"] < 0.02
        assert abs(result.checks["kl_closed_form"] - 1.0 / 6.0) < 1e-12

    def test_example1_indistinguishable_states_reduce_to_iid(self):
        from hmmquickest import example_pair, sample_path, stream_llr

        pair = example_pair(1)
        flat_pre = two_state_bernoulli_pair(p=0.15, pd=(0.6, 0.6), pfa=0.18)
        path = sample_path(flat_pre, math.inf, 40, 4)
        stream = stream_llr(flat_pre, path.observations)
        iid = np.array(
            [
                math.log(0.18 / 0.6) if y == 1.0 else math.log(0.82 / 0.4)
                for y in path.observations[1:]
            ]
        )
        assert np.allclose(stream.increments, iid, atol=1e-12)
        assert pair.pre.emission.probs[0] > pair.pre.emission.probs[1] > pair.post.emission.probs[0]

    def test_unknown_example(self):
        with pytest.raises(ValueError):
            run_example(4)


class TestReport:
    def _rows(self):
        pfa = McEstimate(0.01, 0.001, 1000, 3)
        add = McEstimate(12.5, 0.2, 900, 1)
        m2 = McEstimate(200.0, 5.0, 900, 1)
        return OperatingCharacteristic(
            rows=(
                ThresholdRow("shiryaev", 99.0, pfa, add, m2, 1000, 7),
                ThresholdRow("shiryaev", 9.0, pfa, add, None, 1000, 7),
            )
        )

    def test_header_and_order(self, tmp_path):
        path = tmp_path / "report.csv"
        emit_report(self._rows(), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "detector,threshold,pfa_hat,pfa_se,add_hat,add_se,m2_hat,m2_se,reps,censored,seed"
        assert lines[1].startswith("shiryaev,9.0")
        assert lines[2].startswith("shiryaev,99.0")

    def test_round_trip_parse(self, tmp_path):
        path = tmp_path / "report.csv"
        emit_report(self._rows(), path)
        rows = path.read_text().splitlines()[1:]
        first = rows[1].split(",")
        assert float(first[2]) == 0.01
        assert first[6] == repr(200.0)

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_report(self._rows(), a)
        emit_report(self._rows(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report(OperatingCharacteristic(rows=()), tmp_path / "x.csv")

    def test_simulate_grid_end_to_end(self, tmp_path):
        config = bernoulli_config(thresholds=(4.0, 12.0), horizon=60, reps=2000)
        oc = simulate_grid(config)
        assert len(oc.rows) == 2
        assert oc.rows[0].pfa.mean >= oc.rows[1].pfa.mean
        emit_report(oc, tmp_path / "grid.csv")
        assert (tmp_path / "grid.csv").exists()


def test_two_state_gaussian_loglr_validates_input():
    with pytest.raises(ValueError):
        two_state_gaussian_loglr(scalar_ar_pair(), np.zeros(5))
