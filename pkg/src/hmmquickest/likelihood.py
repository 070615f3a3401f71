"""Likelihood ratios for HMM observation streams.

The joint density of an observation prefix under one regime is the L1 norm
of a product of nonnegative matrices applied to the stationary vector. The
filter below carries that product in normalized form: a probability vector
of hidden-state weights plus the accumulated log of the L1 norms. The
log-likelihood-ratio increment between two regimes is then the difference of
their per-step log-norm increments.

All norm accumulation happens in the log domain with per-step
renormalization; raw matrix products underflow within tens of steps.
A brute-force sum over hidden sequences is provided as a test oracle for
small instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product as _iterproduct

import numpy as np

from .errors import ZeroDensityError
from .hmm import HmmSpec, RegimePair, _readonly


@dataclass(frozen=True)
class MatrixStep:
    """One step of the nonnegative random matrix sequence.

    ``entries[x1, x0]`` is the transition probability from ``x0`` to ``x1``
    times the observation density in the destination state ``x1``.
    """

    entries: np.ndarray
    regime: str  # "pre" or "post"

    def __post_init__(self):
        object.__setattr__(self, "entries", _readonly(self.entries))
        if np.any(self.entries < 0):
            raise ZeroDensityError("matrix step has a negative entry")
        if not np.any(self.entries > 0):
            raise ZeroDensityError("observation has zero density under the regime")


@dataclass(frozen=True)
class FilterState:
    """Normalized hidden-state weights with the accumulated log L1 norm."""

    spec: HmmSpec
    weights: np.ndarray
    log_norm: float
    last_observation: float
    step_index: int
    regime: str = "pre"

    def __post_init__(self):
        object.__setattr__(self, "weights", _readonly(self.weights))
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ZeroDensityError("filter weights do not sum to 1")
        if not math.isfinite(self.log_norm):
            raise ZeroDensityError("filter log norm is not finite")


def matrix_step(spec: HmmSpec, y_k: float, y_prev: float, regime: str = "pre") -> MatrixStep:
    """Build the step matrix for observation ``y_k`` given ``y_prev``."""
    logf = spec.emission.log_density(y_k, y_prev)
    entries = spec.transition.T * np.exp(logf)[:, None]
    try:
        return MatrixStep(entries=entries, regime=regime)
    except ZeroDensityError as exc:
        raise ZeroDensityError(
            f"observation {y_k!r} has zero density under the {regime} regime",
            observation=y_k,
        ) from exc


def filter_init(spec: HmmSpec, y_0: float, regime: str = "pre") -> FilterState:
    """Start a filter at the initial observation.

    Weights are the stationary vector reweighted by the initial observation
    density; the log norm starts at the log initial marginal density.
    """
    logf = spec.emission.initial_log_density(y_0)
    u = spec.stationary * np.exp(logf)
    norm = float(u.sum())
    if norm <= 0.0 or not math.isfinite(norm):
        raise ZeroDensityError(
            f"initial observation {y_0!r} has zero density under the {regime} regime",
            observation=y_0,
            index=0,
        )
    return FilterState(
        spec=spec,
        weights=u / norm,
        log_norm=math.log(norm),
        last_observation=float(y_0),
        step_index=0,
        regime=regime,
    )


def filter_update(state: FilterState, step: MatrixStep, y_k: float) -> FilterState:
    """Apply one step matrix and renormalize.

    After n updates the accumulated ``log_norm`` equals the log L1 norm of
    the full matrix product applied to the stationary vector.
    """
    if step.regime != state.regime:
        raise ValueError(f"step regime {step.regime!r} does not match filter regime {state.regime!r}")
    v = step.entries @ state.weights
    norm = float(v.sum())
    if norm <= 0.0 or not math.isfinite(norm):
        raise ZeroDensityError(
            f"observation {y_k!r} has zero density under the {state.regime} regime",
            observation=y_k,
            index=state.step_index + 1,
        )
    return FilterState(
        spec=state.spec,
        weights=v / norm,
        log_norm=state.log_norm + math.log(norm),
        last_observation=float(y_k),
        step_index=state.step_index + 1,
        regime=state.regime,
    )


def filter_advance(state: FilterState, y_k: float) -> FilterState:
    """Convenience: build the step matrix from the state's own regime and
    apply it."""
    step = matrix_step(state.spec, y_k, state.last_observation, state.regime)
    return filter_update(state, step, y_k)


def llr_increment(pre_state: FilterState, post_state: FilterState, y_n: float):
    """Advance both regime filters by one observation and return the
    log-likelihood-ratio increment.

    The increment is the post-regime log-norm gain minus the pre-regime one,
    i.e. the log ratio of the two one-step predictive densities of ``y_n``.
    Returns ``(g, new_pre_state, new_post_state)``.
    """
    if pre_state.step_index != post_state.step_index:
        raise ValueError("pre and post filters are not aligned on the same history")
    new_pre = filter_advance(pre_state, y_n)
    new_post = filter_advance(post_state, y_n)
    g = (new_post.log_norm - post_state.log_norm) - (new_pre.log_norm - pre_state.log_norm)
    return g, new_pre, new_post


@dataclass(frozen=True)
class LlrStream:
    """Log-likelihood-ratio increments with their running sum.

    ``cumulative[n-1]`` is the sum of the first n increments accumulated
    left to right, so it equals ``sum(increments[:n])`` exactly.
    """

    increments: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "increments", _readonly(self.increments))
        object.__setattr__(self, "cumulative", _readonly(self.cumulative))


def stream_llr(pair: RegimePair, observations) -> LlrStream:
    """Run both regime filters over a full observation vector and collect
    the increment stream."""
    obs = np.asarray(observations, dtype=float)
    pre = filter_init(pair.pre, obs[0], "pre")
    post = filter_init(pair.post, obs[0], "post")
    inc = np.empty(obs.size - 1)
    cum = np.empty(obs.size - 1)
    total = 0.0
    for i in range(1, obs.size):
        g, pre, post = llr_increment(pre, post, obs[i])
        inc[i - 1] = g
        total += g
        cum[i - 1] = total
    return LlrStream(increments=inc, cumulative=cum)


def llr_segment(pair: RegimePair, observations, k: int, n: int, mode: str = "exact") -> float:
    """Log-likelihood ratio of "change at k" against "no change" over
    ``y_0 .. y_n``.

    exact mode
        The pre-regime filter runs to k-1 and hands its posterior weights to
        a post-regime filter, matching a hidden state that continues across
        the change. The result is the exact log ratio of the two joint
        densities of the observed prefix.
    stationary-restart mode
        Both the numerator and denominator treat ``y_k`` as a fresh start
        from the corresponding stationary regime, an O(1)-memory
        approximation of the exact conditional.
    """
    obs = np.asarray(observations, dtype=float)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n >= obs.size:
        raise ValueError(f"n={n} is past the end of the observations")
    if mode not in ("exact", "restart"):
        raise ValueError(f"unknown mode {mode!r}")

    if mode == "exact":
        pre = filter_init(pair.pre, obs[0], "pre")
        for i in range(1, k):
            pre = filter_advance(pre, obs[i])
        pre_at_change = pre
        post = FilterState(
            spec=pair.post,
            weights=pre_at_change.weights,
            log_norm=0.0,
            last_observation=pre_at_change.last_observation,
            step_index=pre_at_change.step_index,
            regime="post",
        )
        for i in range(k, n + 1):
            post = filter_advance(post, obs[i])
            pre = filter_advance(pre, obs[i])
        return post.log_norm - (pre.log_norm - pre_at_change.log_norm)

    # restart: both sides treat y_k as a fresh stationary start
    post = filter_init(pair.post, obs[k], "post")
    pre = filter_init(pair.pre, obs[k], "pre")
    for i in range(k + 1, n + 1):
        post = filter_advance(post, obs[i])
        pre = filter_advance(pre, obs[i])
    return post.log_norm - pre.log_norm


BRUTE_FORCE_CAP = 100_000


def brute_force_likelihood(spec: HmmSpec, observations) -> float:
    """Joint density of an observation prefix by exhaustive summation over
    all hidden-state sequences. Test oracle only; capped at 1e5 terms."""
    obs = np.asarray(observations, dtype=float)
    d = spec.num_states
    n = obs.size
    if d**n > BRUTE_FORCE_CAP:
        raise ValueError(f"enumeration of {d}^{n} hidden sequences exceeds the cap")
    init_logf = spec.emission.initial_log_density(obs[0])
    step_logf = [spec.emission.log_density(obs[i], obs[i - 1]) for i in range(1, n)]
    terms = []
    for path in _iterproduct(range(d), repeat=n):
        logp = math.log(spec.stationary[path[0]]) + init_logf[path[0]]
        for i in range(1, n):
            p = spec.transition[path[i - 1], path[i]]
            if p == 0.0:
                logp = -math.inf
                break
            logp += math.log(p) + step_logf[i - 1][path[i]]
        if logp > -math.inf:
            terms.append(math.exp(logp))
    return math.fsum(terms)
