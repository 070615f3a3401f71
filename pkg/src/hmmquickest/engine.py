"""Vectorized replication engine for the Monte Carlo estimators.

Replications are vectorized across a batch while every replication keeps its
own random substream derived from (master seed, purpose tag, replication
index). The per-replication draw protocol is fixed: one optional uniform for
the change-point draw, then one uniform block for the hidden path, then one
noise block for the observations. This makes results independent of batch
size and thread count, and makes a batch row coincide bit for bit with the
scalar path sampler given the same substream.

The per-step work is a handful of (batch, d) array operations: hidden-state
transition, observation draw, and one normalized filter update per regime.
Log-norm increments of the two filters are differenced into the
log-likelihood-ratio stream that every estimator consumes.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ExhaustedPriorError, ZeroDensityError
from .hmm import RegimePair
from .priors import ChangePointPrior

NO_CHANGE = np.int64(2**62)
BATCH_SIZE = 8192

# purpose tags keep the substreams of different estimators apart
PURPOSE_PFA = 1
PURPOSE_ADD = 2
PURPOSE_OVERSHOOT = 3
PURPOSE_ETA = 4
PURPOSE_POISSON = 5
PURPOSE_SLLN = 6
PURPOSE_MARTINGALE = 7
PURPOSE_KL = 8


def rep_seed_sequences(master_seed: int, purpose: int, start: int, count: int):
    return [
        np.random.SeedSequence(master_seed, spawn_key=(purpose, r))
        for r in range(start, start + count)
    ]


def map_batches(fn, reps: int, threads: int = 1, batch_size: int = BATCH_SIZE):
    """Apply ``fn(start, count)`` over fixed-size batches and return the
    results in batch order regardless of the worker count."""
    spans = [(s, min(batch_size, reps - s)) for s in range(0, reps, batch_size)]
    if threads <= 1 or len(spans) <= 1:
        return [fn(s, c) for s, c in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, s, c) for s, c in spans]
        return [f.result() for f in futures]


@dataclass
class BatchState:
    """Mutable per-batch simulation state advanced one step at a time."""

    states: np.ndarray       # (b,) hidden states
    obs: np.ndarray          # (b,) current observation
    w_pre: np.ndarray        # (b, d) pre-regime filter weights
    w_post: np.ndarray       # (b, d) post-regime filter weights
    u: np.ndarray            # (b, n) uniforms for the hidden path
    eps: np.ndarray          # (b, n) emission noise
    cum_pre: np.ndarray      # (d, d) row-cumulative pre transition
    cum_post: np.ndarray     # (d, d) row-cumulative post transition
    t: int                   # current time index


def _predraw(seeds, horizon: int, noise: str, nu_from_prior: ChangePointPrior | None):
    b = len(seeds)
    n = horizon + 1
    u = np.empty((b, n))
    eps = np.empty((b, n))
    nu_u = np.empty(b) if nu_from_prior is not None else None
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        if nu_u is not None:
            nu_u[i] = rng.random()
        u[i] = rng.random(n)
        eps[i] = rng.standard_normal(n) if noise == "normal" else rng.random(n)
    nus = nu_from_prior.sample_batch(nu_u) if nu_u is not None else None
    return u, eps, nus


def _normalized(weights_lin: np.ndarray, log_shift: np.ndarray, where: str, t: int):
    s = weights_lin.sum(axis=1)
    bad = ~np.isfinite(s) | (s <= 0.0)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise ZeroDensityError(
            f"zero predictive density under the {where} regime at step {t} "
            f"(replication offset {idx})",
            index=t,
        )
    return weights_lin / s[:, None], log_shift + np.log(s)


def _filter_step(weights, trans, logf, where: str, t: int):
    with np.errstate(invalid="ignore"):
        m = logf.max(axis=1)
        lin = (weights @ trans) * np.exp(logf - m[:, None])
    return _normalized(lin, m, where, t)


def _init_filter(spec, y0: np.ndarray, where: str):
    logf = _initial_log_density_batch(spec.emission, y0)
    with np.errstate(invalid="ignore"):
        m = logf.max(axis=1)
        lin = spec.stationary[None, :] * np.exp(logf - m[:, None])
    w, _ = _normalized(lin, m, where, 0)
    return w


def _initial_log_density_batch(em, y: np.ndarray) -> np.ndarray:
    if em.kind == "ar1":
        var = 1.0 / (1.0 - em.coeffs**2)
        return (
            -0.5 * y[:, None] ** 2 / var[None, :]
            - 0.5 * np.log(var)[None, :]
            - 0.5 * math.log(2.0 * math.pi)
        )
    return em.log_density_batch(y)


def start_batch(pair: RegimePair, nus: np.ndarray, u: np.ndarray, eps: np.ndarray) -> BatchState:
    b = u.shape[0]
    d = pair.num_states
    post_init = nus == 0

    cum_pre = np.cumsum(pair.pre.stationary)
    cum_post = np.cumsum(pair.post.stationary)
    cum0 = np.where(post_init[:, None], cum_post[None, :], cum_pre[None, :])
    states = np.minimum((cum0 <= u[:, 0:1]).sum(axis=1), d - 1).astype(np.int64)

    y0_pre = pair.pre.emission.initial_draw_batch(states, eps[:, 0])
    y0_post = pair.post.emission.initial_draw_batch(states, eps[:, 0])
    obs = np.where(post_init, y0_post, y0_pre)

    w_pre = _init_filter(pair.pre, obs, "pre")
    w_post = _init_filter(pair.post, obs, "post")
    return BatchState(
        states=states,
        obs=obs,
        w_pre=w_pre,
        w_post=w_post,
        u=u,
        eps=eps,
        cum_pre=np.cumsum(pair.pre.transition, axis=1),
        cum_post=np.cumsum(pair.post.transition, axis=1),
        t=0,
    )


def step_batch(pair: RegimePair, state: BatchState, nus: np.ndarray) -> np.ndarray:
    """Advance hidden states, observations and both filters by one step and
    return the (b,) log-likelihood-ratio increments."""
    t = state.t + 1
    d = pair.num_states
    post_now = t >= nus

    rows = np.where(post_now[:, None], state.cum_post[state.states], state.cum_pre[state.states])
    new_states = np.minimum((rows <= state.u[:, t : t + 1]).sum(axis=1), d - 1).astype(np.int64)

    y_pre = pair.pre.emission.draw_batch(new_states, state.obs, state.eps[:, t])
    y_post = pair.post.emission.draw_batch(new_states, state.obs, state.eps[:, t])
    y = np.where(post_now, y_post, y_pre)

    logf_pre = pair.pre.emission.log_density_batch(y, state.obs)
    logf_post = pair.post.emission.log_density_batch(y, state.obs)
    state.w_pre, inc_pre = _filter_step(state.w_pre, pair.pre.transition, logf_pre, "pre", t)
    state.w_post, inc_post = _filter_step(state.w_post, pair.post.transition, logf_post, "post", t)

    state.states = new_states
    state.obs = y
    state.t = t
    return inc_post - inc_pre


def simulate_increments(
    pair: RegimePair,
    nus: np.ndarray,
    horizon: int,
    seeds,
    init: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Full (b, horizon) array of log-likelihood-ratio increments.

    ``init`` optionally replaces the time-0 draw with explicit start
    configurations: (states, observations, pre weights, post weights). The
    index-0 slot of the pre-drawn blocks is skipped in that case so the draw
    protocol stays fixed.
    """
    noise = pair.pre.emission.noise
    u, eps, _ = _predraw(seeds, horizon, noise, None)
    if init is None:
        state = start_batch(pair, nus, u, eps)
    else:
        x0, y0, w_pre, w_post = init
        state = BatchState(
            states=x0.astype(np.int64).copy(),
            obs=np.asarray(y0, dtype=float).copy(),
            w_pre=np.asarray(w_pre, dtype=float).copy(),
            w_post=np.asarray(w_post, dtype=float).copy(),
            u=u,
            eps=eps,
            cum_pre=np.cumsum(pair.pre.transition, axis=1),
            cum_post=np.cumsum(pair.post.transition, axis=1),
            t=0,
        )
    g = np.empty((u.shape[0], horizon))
    for i in range(horizon):
        g[:, i] = step_batch(pair, state, nus)
    return g


def simulate_increments_prior(
    pair: RegimePair, prior: ChangePointPrior, horizon: int, seeds
) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`simulate_increments` but with the change point of each
    replication drawn from the prior (one extra uniform at the head of the
    replication's draw protocol). Returns (increments, change points)."""
    noise = pair.pre.emission.noise
    u, eps, nus = _predraw(seeds, horizon, noise, prior)
    state = start_batch(pair, nus, u, eps)
    g = np.empty((u.shape[0], horizon))
    for i in range(horizon):
        g[:, i] = step_batch(pair, state, nus)
    return g, nus


# ---------------------------------------------------------------------------
# Vectorized detector passes
# ---------------------------------------------------------------------------

def _prior_tables(prior: ChangePointPrior, horizon: int):
    log_w = np.empty(horizon + 1)
    log_surv = np.empty(horizon + 1)
    for t in range(horizon + 1):
        w = prior.pmf(t)
        log_w[t] = math.log(w) if w > 0 else -math.inf
        log_surv[t] = prior.log_survival(t)
    return log_w, log_surv


def shiryaev_pass(g: np.ndarray, prior: ChangePointPrior, log_threshold: float):
    """First-crossing times of the posterior-odds statistic over an
    increment batch. Returns (stop times with 0 for no stop, statistic at
    stop)."""
    b, horizon = g.shape
    log_w, log_surv = _prior_tables(prior, horizon)
    w0 = prior.pmf(0)
    log_num = np.full(b, math.log(w0) if w0 > 0 else -math.inf)
    stop = np.zeros(b, dtype=np.int64)
    stat = np.full(b, -np.inf)
    open_mask = np.ones(b, dtype=bool)
    for t in range(1, horizon + 1):
        if log_surv[t] == -math.inf:
            raise ExhaustedPriorError(f"prior survival is zero at step {t}")
        log_num = np.logaddexp(log_num, log_w[t]) + g[:, t - 1]
        log_r = log_num - log_surv[t]
        crossed = open_mask & (log_r >= log_threshold)
        if np.any(crossed):
            stop[crossed] = t
            stat[crossed] = log_r[crossed]
            open_mask &= ~crossed
            if not open_mask.any():
                break
    return stop, stat


def gsr_pass(g: np.ndarray, head_start: float, log_threshold: float):
    """First-crossing times of the generalized SR statistic."""
    b, horizon = g.shape
    log_r = np.full(b, math.log(head_start) if head_start > 0 else -math.inf)
    stop = np.zeros(b, dtype=np.int64)
    stat = np.full(b, -np.inf)
    open_mask = np.ones(b, dtype=bool)
    for t in range(1, horizon + 1):
        log_r = np.logaddexp(0.0, log_r) + g[:, t - 1]
        crossed = open_mask & (log_r >= log_threshold)
        if np.any(crossed):
            stop[crossed] = t
            stat[crossed] = log_r[crossed]
            open_mask &= ~crossed
            if not open_mask.any():
                break
    return stop, stat


def detector_pass(g: np.ndarray, kind: str, prior: ChangePointPrior, head_start: float, log_threshold: float):
    if kind == "shiryaev":
        return shiryaev_pass(g, prior, log_threshold)
    if kind == "gsr":
        return gsr_pass(g, head_start, log_threshold)
    raise ValueError(f"unknown detector kind {kind!r}")


# ---------------------------------------------------------------------------
# Start-configuration harvesting for the Markov-dependence estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StartEnsemble:
    """Per-replication start configurations (hidden state, observation and
    both filter weight vectors)."""

    states: np.ndarray
    obs: np.ndarray
    w_pre: np.ndarray
    w_post: np.ndarray

    def take(self, count: int) -> "StartEnsemble":
        reps = np.resize(np.arange(self.states.size), count)
        return StartEnsemble(
            self.states[reps], self.obs[reps], self.w_pre[reps], self.w_post[reps]
        )

    def as_init(self):
        return (self.states, self.obs, self.w_pre, self.w_post)


def harvest_configs(
    pair: RegimePair,
    horizon: int,
    seeds,
    mode: str,
    drift_shift: float = 0.0,
) -> StartEnsemble:
    """Simulate post-change paths and harvest start configurations.

    mode "burn_in": the configuration at the final step.
    mode "ladder": the configuration at the last strict-ascent epoch of the
    shifted random walk (increments plus ``drift_shift``), approximating the
    invariant law of the ladder chain.
    """
    noise = pair.pre.emission.noise
    u, eps, _ = _predraw(seeds, horizon, noise, None)
    nus = np.ones(u.shape[0], dtype=np.int64)
    state = start_batch(pair, nus, u, eps)
    b = u.shape[0]
    walk = np.zeros(b)
    run_max = np.zeros(b)
    rec = StartEnsemble(
        states=state.states.copy(),
        obs=state.obs.copy(),
        w_pre=state.w_pre.copy(),
        w_post=state.w_post.copy(),
    )
    rec_states = rec.states
    rec_obs = rec.obs
    rec_wpre = rec.w_pre
    rec_wpost = rec.w_post
    for _ in range(horizon):
        g = step_batch(pair, state, nus)
        if mode == "ladder":
            walk = walk + g + drift_shift
            new_max = walk > run_max
            if np.any(new_max):
                run_max = np.where(new_max, walk, run_max)
                rec_states[new_max] = state.states[new_max]
                rec_obs[new_max] = state.obs[new_max]
                rec_wpre[new_max] = state.w_pre[new_max]
                rec_wpost[new_max] = state.w_post[new_max]
    if mode == "burn_in":
        return StartEnsemble(
            states=state.states.copy(),
            obs=state.obs.copy(),
            w_pre=state.w_pre.copy(),
            w_post=state.w_post.copy(),
        )
    return StartEnsemble(rec_states, rec_obs, rec_wpre, rec_wpost)
