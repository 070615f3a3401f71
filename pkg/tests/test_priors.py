from __future__ import annotations

import math

import numpy as np
import pytest

from hmmquickest import (
    ExhaustedPriorError,
    GeometricPrior,
    ModelValidationError,
    TabulatedPrior,
    prior_eval,
    prior_mean,
    tail_exponent,
    weight_kn,
)


def geometric_table(rho, k_max, omega0=0.0):
    w = [omega0] + [(1 - omega0) * rho * (1 - rho) ** (k - 1) for k in range(1, k_max + 1)]
    return TabulatedPrior(np.array(w), tail_ratio=1 - rho)


class TestPriorEval:
    def test_plain_geometric(self):
        prior = GeometricPrior(0.0, 0.1)
        pmf, surv = prior_eval(prior, 1)
        assert abs(pmf - 0.1) < 1e-15
        _, surv3 = prior_eval(prior, 3)
        assert abs(surv3 - 0.9**3) < 1e-15

    def test_zero_modified(self):
        prior = GeometricPrior(0.2, 0.5)
        assert abs(prior.pmf(0) - 0.2) < 1e-15
        assert abs(prior.pmf(1) - 0.4) < 1e-15

    def test_tabulated_matches_geometric_pointwise(self):
        rho = 0.1
        geo = GeometricPrior(0.0, rho)
        tab = geometric_table(rho, 40)
        for k in range(0, 120):
            assert abs(geo.pmf(k) - tab.pmf(k)) <= 1e-12
            assert abs(geo.survival(k) - tab.survival(k)) <= 1e-12
        for n in (5, 30, 80):
            for k in range(0, n + 1):
                assert abs(weight_kn(geo, k, n) - weight_kn(tab, k, n)) <= 1e-9

    def test_survival_decreasing(self):
        prior = GeometricPrior(0.3, 0.2)
        vals = [prior.survival(n) for n in range(50)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_negative_k_rejected(self):
        with pytest.raises(ValueError):
            prior_eval(GeometricPrior(0.0, 0.1), -1)


class TestWeightKn:
    def test_geometric_closed_form(self):
        prior = GeometricPrior(0.0, 0.2)
        for n in (3, 10):
            for k in range(1, n + 1):
                expect = 0.2 * 0.8 ** (k - 1 - n)
                assert abs(weight_kn(prior, k, n) - expect) < 1e-12
        assert abs(weight_kn(prior, 3, 3) - 0.25) < 1e-15

    def test_mass_at_zero_weight(self):
        prior = GeometricPrior(0.5, 0.3)
        assert abs(weight_kn(prior, 0, 0) - 1.0) < 1e-15

    def test_diagonal_weight_constant(self):
        prior = GeometricPrior(0.0, 0.2)
        expect = 0.2 / 0.8
        for n in range(1, 51):
            assert abs(weight_kn(prior, n, n) - expect) < 1e-12

    def test_exhausted_prior(self):
        tab = TabulatedPrior(np.array([0.0, 0.5, 0.5]), tail_ratio=None)
        with pytest.raises(ExhaustedPriorError):
            weight_kn(tab, 1, 5)

    def test_posterior_weight_normalization(self):
        for prior in (GeometricPrior(0.2, 0.15), geometric_table(0.3, 60, omega0=0.1)):
            for n in range(0, 101, 10):
                s = prior.survival(n)
                total = sum(weight_kn(prior, k, n) for k in range(0, n + 1)) * s
                below = 1.0 - s
                assert abs(total - below) <= 1e-10


class TestTailExponent:
    def test_geometric_exact(self):
        c, estimated = tail_exponent(GeometricPrior(0.0, 0.1))
        assert abs(c - (-math.log(0.9))) < 1e-15
        assert not estimated

    def test_tabulated_geometric_estimate(self):
        c, estimated = tail_exponent(geometric_table(0.3, 50))
        assert estimated
        assert abs(c - (-math.log(0.7))) / (-math.log(0.7)) < 0.01

    def test_heavy_tail_estimate_near_zero(self):
        ks = np.arange(1, 400, dtype=float)
        w = ks**-3
        w = np.concatenate([[0.0], w / w.sum()])
        tab = TabulatedPrior(w, tail_ratio=None)
        c, estimated = tail_exponent(tab)
        assert estimated
        assert 0.0 <= c < 0.05


class TestPriorMean:
    def test_geometric(self):
        assert abs(prior_mean(GeometricPrior(0.0, 0.1)) - 10.0) < 1e-12
        assert abs(prior_mean(GeometricPrior(0.5, 0.1)) - 5.0) < 1e-12

    def test_omega0_boundary_excluded(self):
        with pytest.raises(ModelValidationError):
            GeometricPrior(1.0, 0.1)

    def test_point_mass(self):
        tab = TabulatedPrior(np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0]), tail_ratio=None)
        assert prior_mean(tab) == 5.0

    def test_tabulated_with_tail_matches_geometric(self):
        geo = GeometricPrior(0.0, 0.25)
        tab = geometric_table(0.25, 30)
        assert abs(prior_mean(geo) - prior_mean(tab)) < 1e-9

    def test_mass_deficit_rejected(self):
        with pytest.raises(ModelValidationError, match="deficit"):
            TabulatedPrior(np.array([0.0, 0.4, 0.4]), tail_ratio=None)


class TestSampling:
    def test_inverse_cdf_consistency(self):
        prior = GeometricPrior(0.2, 0.3)
        u = np.linspace(1e-6, 1 - 1e-6, 5001)
        samples = prior.sample_batch(u)
        for k in range(0, 20):
            got = (samples <= k).mean()
            expect = 1.0 - prior.survival(k)
            assert abs(got - expect) < 2e-3

    def test_tabulated_tail_sampling(self):
        tab = geometric_table(0.3, 8)
        geo = GeometricPrior(0.0, 0.3)
        u = np.linspace(1e-6, 1 - 1e-6, 4001)
        a = tab.sample_batch(u)
        b = geo.sample_batch(u)
        assert np.array_equal(a, b)

    def test_survival_batch_matches_scalar(self):
        for prior in (GeometricPrior(0.1, 0.2), geometric_table(0.2, 25, omega0=0.1)):
            ns = np.arange(0, 60)
            batch = prior.survival_batch(ns)
            scalar = np.array([prior.survival(int(n)) for n in ns])
            assert np.allclose(batch, scalar, atol=1e-12)
