"""Finite-state hidden Markov regimes: emission families, validated model
specifications, change-point path sampling, and Kullback-Leibler rate
estimation.

A regime is a hidden ergodic chain on ``{0, .., d-1}`` plus a per-state
observation density. Two regimes (pre- and post-change) with the same state
count and emission kind form a :class:`RegimePair`. Paths are sampled with a
planted change point: the hidden state crosses the change continuously and
only the dynamics switch.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateModelWarning, ModelValidationError
from .mc import McEstimate

_LOG_2PI = math.log(2.0 * math.pi)

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Emission families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianEmission:
    """Per-state Gaussian observation density N(mean[x], std[x]^2)."""

    means: np.ndarray
    stds: np.ndarray

    kind = "gaussian"
    conditional = False  # density does not depend on the previous observation
    noise = "normal"

    def __post_init__(self):
        object.__setattr__(self, "means", _readonly(self.means))
        object.__setattr__(self, "stds", _readonly(self.stds))
        if self.means.ndim != 1 or self.means.shape != self.stds.shape:
            raise ModelValidationError("gaussian emission needs matching 1-d means and stds")
        if not np.all(self.stds > 0):
            raise ModelValidationError("gaussian stddev must be positive")

    @property
    def num_states(self) -> int:
        return self.means.size

    def log_density(self, y: float, y_prev=None) -> np.ndarray:
        z = (y - self.means) / self.stds
        return -0.5 * z * z - np.log(self.stds) - 0.5 * _LOG_2PI

    def initial_log_density(self, y: float) -> np.ndarray:
        return self.log_density(y)

    def log_density_batch(self, y: np.ndarray, y_prev=None) -> np.ndarray:
        z = (y[:, None] - self.means[None, :]) / self.stds[None, :]
        return -0.5 * z * z - np.log(self.stds)[None, :] - 0.5 * _LOG_2PI

    def draw(self, state: int, y_prev, noise: float) -> float:
        return float(self.means[state] + self.stds[state] * noise)

    def initial_draw(self, state: int, noise: float) -> float:
        return self.draw(state, None, noise)

    def draw_batch(self, states: np.ndarray, y_prev, noise: np.ndarray) -> np.ndarray:
        return self.means[states] + self.stds[states] * noise

    def initial_draw_batch(self, states: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return self.draw_batch(states, None, noise)


@dataclass(frozen=True)
class BernoulliEmission:
    """Per-state Bernoulli observation on {0, 1} with success probability
    probs[x]."""

    probs: np.ndarray

    kind = "bernoulli"
    conditional = False
    noise = "uniform"

    def __post_init__(self):
        object.__setattr__(self, "probs", _readonly(self.probs))
        if self.probs.ndim != 1:
            raise ModelValidationError("bernoulli emission needs a 1-d probability vector")
        if not np.all((self.probs > 0) & (self.probs < 1)):
            raise ModelValidationError("bernoulli success probability must lie in (0, 1)")

    @property
    def num_states(self) -> int:
        return self.probs.size

    def log_density(self, y: float, y_prev=None) -> np.ndarray:
        if y == 1.0:
            return np.log(self.probs)
        if y == 0.0:
            return np.log1p(-self.probs)
        # off-support observation: zero density in every state
        return np.full(self.num_states, -np.inf)

    def initial_log_density(self, y: float) -> np.ndarray:
        return self.log_density(y)

    def log_density_batch(self, y: np.ndarray, y_prev=None) -> np.ndarray:
        out = np.where(y[:, None] == 1.0, np.log(self.probs)[None, :], np.log1p(-self.probs)[None, :])
        bad = (y != 0.0) & (y != 1.0)
        if np.any(bad):
            out[bad] = -np.inf
        return out

    def draw(self, state: int, y_prev, noise: float) -> float:
        return 1.0 if noise < self.probs[state] else 0.0

    def initial_draw(self, state: int, noise: float) -> float:
        return self.draw(state, None, noise)

    def draw_batch(self, states: np.ndarray, y_prev, noise: np.ndarray) -> np.ndarray:
        return (noise < self.probs[states]).astype(float)

    def initial_draw_batch(self, states: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return self.draw_batch(states, None, noise)


@dataclass(frozen=True)
class Ar1GaussianEmission:
    """First-order autoregression with per-state coefficient and unit noise:
    y' = a[x] * y + N(0, 1).

    The initial observation (no predecessor available) is drawn from the
    per-state stationary law N(0, 1 / (1 - a[x]^2)).
    """

    coeffs: np.ndarray

    kind = "ar1"
    conditional = True
    noise = "normal"

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _readonly(self.coeffs))
        if self.coeffs.ndim != 1:
            raise ModelValidationError("ar1 emission needs a 1-d coefficient vector")
        if not np.all(np.abs(self.coeffs) < 1):
            raise ModelValidationError("ar1 coefficients must lie strictly inside (-1, 1)")

    @property
    def num_states(self) -> int:
        return self.coeffs.size

    def log_density(self, y: float, y_prev: float = None) -> np.ndarray:
        if y_prev is None:
            raise ValueError("ar1 emission needs the previous observation")
        z = y - self.coeffs * y_prev
        return -0.5 * z * z - 0.5 * _LOG_2PI

    def initial_log_density(self, y: float) -> np.ndarray:
        var = 1.0 / (1.0 - self.coeffs**2)
        return -0.5 * y * y / var - 0.5 * np.log(var) - 0.5 * _LOG_2PI

    def log_density_batch(self, y: np.ndarray, y_prev: np.ndarray = None) -> np.ndarray:
        z = y[:, None] - self.coeffs[None, :] * y_prev[:, None]
        return -0.5 * z * z - 0.5 * _LOG_2PI

    def draw(self, state: int, y_prev: float, noise: float) -> float:
        return float(self.coeffs[state] * y_prev + noise)

    def initial_draw(self, state: int, noise: float) -> float:
        return float(noise / math.sqrt(1.0 - self.coeffs[state] ** 2))

    def draw_batch(self, states: np.ndarray, y_prev: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return self.coeffs[states] * y_prev + noise

    def initial_draw_batch(self, states: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return noise / np.sqrt(1.0 - self.coeffs[states] ** 2)


EmissionFamily = GaussianEmission | BernoulliEmission | Ar1GaussianEmission


def _emission_params(em: EmissionFamily) -> np.ndarray:
    if isinstance(em, GaussianEmission):
        return np.concatenate([em.means, em.stds])
    if isinstance(em, BernoulliEmission):
        return em.probs
    return em.coeffs


# ---------------------------------------------------------------------------
# Chain structure checks and stationary distribution
# ---------------------------------------------------------------------------

def check_ergodic(transition: np.ndarray) -> None:
    """Raise unless the chain is irreducible and aperiodic.

    Uses positivity of boolean matrix powers: a finite chain is irreducible
    and aperiodic exactly when some power of the adjacency pattern is
    entrywise positive, and a power at most d**2 suffices.
    """
    p = np.asarray(transition, dtype=float)
    d = p.shape[0]
    adj = (p > 0.0).astype(np.int64)
    reach = np.minimum(np.eye(d, dtype=np.int64) + adj, 1)
    for _ in range(max(1, int(math.ceil(math.log2(d))) if d > 1 else 1)):
        reach = np.minimum(reach @ reach, 1)
    if not reach.all():
        raise ModelValidationError(
            "transition matrix is reducible: some state is unreachable from another"
        )
    power = adj.copy()
    for _ in range(d * d):
        if power.all():
            return
        power = np.minimum(power @ adj, 1)
    raise ModelValidationError(
        "transition matrix is periodic: no power up to d^2 has all entries positive"
    )


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Stationary probability vector of a row-stochastic matrix.

    Solves the fixed-point linear system directly (one balance equation
    replaced by the normalization constraint).
    """
    p = np.asarray(transition, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ModelValidationError("transition matrix must be square")
    d = p.shape[0]
    if np.any(p < 0):
        raise ModelValidationError("transition probabilities must be nonnegative")
    row_err = np.max(np.abs(p.sum(axis=1) - 1.0))
    if row_err > ROW_SUM_TOL:
        raise ModelValidationError(f"transition rows must sum to 1 (max error {row_err:.3e})")
    check_ergodic(p)
    a = p.T - np.eye(d)
    a[-1, :] = 1.0
    b = np.zeros(d)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    resid = np.max(np.abs(pi @ p - pi))
    if resid > STATIONARY_TOL or abs(pi.sum() - 1.0) > STATIONARY_TOL:
        raise ModelValidationError(f"stationary solve failed (residual {resid:.3e})")
    if np.any(pi <= 0):
        raise ModelValidationError("stationary distribution has a nonpositive entry")
    return pi


# ---------------------------------------------------------------------------
# Model specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HmmSpec:
    """A validated finite-state hidden Markov regime.

    ``stationary`` is derived from the transition matrix at construction and
    cached; all arrays are frozen read-only copies.
    """

    transition: np.ndarray
    emission: EmissionFamily
    stationary: np.ndarray = field(init=False)

    def __post_init__(self):
        t = _readonly(self.transition)
        object.__setattr__(self, "transition", t)
        pi = stationary_distribution(t)
        if self.emission.num_states != t.shape[0]:
            raise ModelValidationError(
                f"emission has {self.emission.num_states} states, transition has {t.shape[0]}"
            )
        object.__setattr__(self, "stationary", _readonly(pi))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]


@dataclass(frozen=True)
class RegimePair:
    """Pre- and post-change regime specifications."""

    pre: HmmSpec
    post: HmmSpec

    def __post_init__(self):
        if self.pre.num_states != self.post.num_states:
            raise ModelValidationError("pre and post regimes must share the state-space size")
        if self.pre.emission.kind != self.post.emission.kind:
            raise ModelValidationError("pre and post regimes must share the emission kind")

    @property
    def num_states(self) -> int:
        return self.pre.num_states

    @property
    def is_degenerate(self) -> bool:
        """True when the two regimes define identical path densities."""
        same_dyn = np.allclose(self.pre.transition, self.post.transition, atol=1e-15)
        a = _emission_params(self.pre.emission)
        b = _emission_params(self.post.emission)
        return bool(same_dyn and a.shape == b.shape and np.allclose(a, b, atol=1e-15))


# ---------------------------------------------------------------------------
# Path sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplePath:
    """Observations with the hidden states retained for diagnostics."""

    observations: np.ndarray
    hidden_states: np.ndarray
    change_point: float  # integer time, or math.inf for the no-change path
    seed: object

    def __post_init__(self):
        if len(self.observations) != len(self.hidden_states):
            raise ModelValidationError("observations and hidden states must have equal length")


def _validate_change_point(nu, horizon: int) -> float:
    if nu == math.inf:
        return math.inf
    if isinstance(nu, (int, np.integer)) and 0 <= int(nu) <= horizon:
        return float(nu)
    raise ValueError(f"change point must be in 0..{horizon} or inf, got {nu!r}")


def sample_path(pair: RegimePair, change_point, horizon: int, seed) -> SamplePath:
    """Sample ``y_0 .. y_horizon`` with the regime switching at the change
    point.

    The initial pair (x_0, y_0) is drawn from the stationary law of whichever
    regime governs time 0. From the change on, the hidden state continues
    from its current value under the post-change transition kernel.

    The draw protocol is fixed: one uniform block for the hidden path, one
    noise block for the observations. Identical seeds give bit-identical
    paths regardless of batching or thread count.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    nu = _validate_change_point(change_point, horizon)
    rng = np.random.default_rng(seed)
    n = horizon + 1
    u = rng.random(n)
    if pair.pre.emission.noise == "normal":
        eps = rng.standard_normal(n)
    else:
        eps = rng.random(n)

    states = np.empty(n, dtype=np.int64)
    obs = np.empty(n, dtype=float)

    init_spec = pair.post if nu == 0 else pair.pre
    cum0 = np.cumsum(init_spec.stationary)
    states[0] = int(np.searchsorted(cum0, u[0], side="right"))
    states[0] = min(states[0], pair.num_states - 1)
    obs[0] = init_spec.emission.initial_draw(states[0], eps[0])

    cum_pre = np.cumsum(pair.pre.transition, axis=1)
    cum_post = np.cumsum(pair.post.transition, axis=1)
    for t in range(1, n):
        post_now = t >= nu
        cum = cum_post if post_now else cum_pre
        x = int(np.searchsorted(cum[states[t - 1]], u[t], side="right"))
        states[t] = min(x, pair.num_states - 1)
        em = pair.post.emission if post_now else pair.pre.emission
        obs[t] = em.draw(states[t], obs[t - 1], eps[t])

    return SamplePath(observations=obs, hidden_states=states, change_point=nu, seed=seed)


# ---------------------------------------------------------------------------
# Kullback-Leibler information number
# ---------------------------------------------------------------------------

def kl_information(pair: RegimePair, num_steps: int, seed) -> McEstimate:
    """Estimate the per-step log-likelihood-ratio drift under the post-change
    law along one long path with the change planted at time 0.

    The standard error comes from batch means, which absorbs the serial
    correlation of the increments.
    """
    if num_steps < 1000:
        raise ValueError("num_steps must be at least 1000")
    from .likelihood import stream_llr

    if pair.is_degenerate:
        warnings.warn(
            "pre- and post-change regimes are identical; the information number is 0",
            DegenerateModelWarning,
            stacklevel=2,
        )
    path = sample_path(pair, 0, num_steps, seed)
    stream = stream_llr(pair, path.observations)
    return McEstimate.from_batch_means(stream.increments)
