from __future__ import annotations

import numpy as np
import pytest

from hmmquickest import (
    Ar1GaussianEmission,
    BernoulliEmission,
    GaussianEmission,
    HmmSpec,
    RegimePair,
)


def two_state_bernoulli_pair(p=0.2, pd=(0.7, 0.4), pfa=0.1):
    trans = np.array([[1 - p, p], [p, 1 - p]])
    pre = HmmSpec(trans, BernoulliEmission(np.array(pd)))
    post = HmmSpec(trans, BernoulliEmission(np.array([pfa, pfa])))
    return RegimePair(pre=pre, post=post)


def two_state_gaussian_pair(pre_means=(0.0, 1.0), post_means=(1.0, 2.0), p=0.1):
    trans = np.array([[1 - p, p], [p, 1 - p]])
    ones = np.ones(2)
    pre = HmmSpec(trans, GaussianEmission(np.array(pre_means), ones))
    post = HmmSpec(trans, GaussianEmission(np.array(post_means), ones))
    return RegimePair(pre=pre, post=post)


def scalar_ar_pair(a0=0.0, a1=0.5):
    eye = np.array([[1.0]])
    pre = HmmSpec(eye, Ar1GaussianEmission(np.array([a0])))
    post = HmmSpec(eye, Ar1GaussianEmission(np.array([a1])))
    return RegimePair(pre=pre, post=post)


def scalar_bernoulli_pair(p_pre=0.1, p_post=0.5):
    eye = np.array([[1.0]])
    pre = HmmSpec(eye, BernoulliEmission(np.array([p_pre])))
    post = HmmSpec(eye, BernoulliEmission(np.array([p_post])))
    return RegimePair(pre=pre, post=post)


def random_spec(rng, d, kind):
    """Random ergodic spec for oracle cross-checks."""
    trans = rng.uniform(0.1, 1.0, size=(d, d))
    trans /= trans.sum(axis=1, keepdims=True)
    if kind == "bernoulli":
        emission = BernoulliEmission(rng.uniform(0.15, 0.85, size=d))
    elif kind == "gaussian":
        emission = GaussianEmission(rng.uniform(-1.5, 1.5, size=d), rng.uniform(0.6, 1.6, size=d))
    else:
        emission = Ar1GaussianEmission(rng.uniform(-0.7, 0.7, size=d))
    return HmmSpec(trans, emission)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
