"""Change-point prior distributions.

Two families: the zero-modified geometric law, and a tabulated weight vector
that either continues with an analytic geometric tail or is hard-truncated.
Both expose the pmf, the survival function, the posterior mixing weights
used by the Bayesian detector, the exponential tail rate, and the mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ExhaustedPriorError, ModelValidationError
from .hmm import _readonly

PMF_TOL = 1e-12


@dataclass(frozen=True)
class GeometricPrior:
    """Zero-modified geometric change-point law.

    Mass ``omega0`` sits at 0; conditionally on a positive change point the
    law is geometric with success probability ``rho``.
    """

    omega0: float
    rho: float

    kind = "geometric"

    def __post_init__(self):
        if not 0.0 <= self.omega0 < 1.0:
            raise ModelValidationError("omega0 must lie in [0, 1)")
        if not 0.0 < self.rho < 1.0:
            raise ModelValidationError("rho must lie in (0, 1)")

    def pmf(self, k: int) -> float:
        if k < 0:
            return 0.0
        if k == 0:
            return self.omega0
        return (1.0 - self.omega0) * self.rho * (1.0 - self.rho) ** (k - 1)

    def survival(self, n: int) -> float:
        """P(change point > n)."""
        if n < 0:
            return 1.0
        return (1.0 - self.omega0) * (1.0 - self.rho) ** n

    def log_survival(self, n: int) -> float:
        if n < 0:
            return 0.0
        return math.log1p(-self.omega0) + n * math.log1p(-self.rho)

    def mean(self) -> float:
        return (1.0 - self.omega0) / self.rho

    def sample(self, u: float) -> int:
        """Deterministic inverse-CDF transform of a uniform draw."""
        if u < self.omega0:
            return 0
        v = (u - self.omega0) / (1.0 - self.omega0)
        v = min(v, 1.0 - 1e-16)
        return 1 + int(math.floor(math.log1p(-v) / math.log1p(-self.rho)))

    def sample_batch(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros(u.shape, dtype=np.int64)
        pos = u >= self.omega0
        v = np.minimum((u[pos] - self.omega0) / (1.0 - self.omega0), 1.0 - 1e-16)
        out[pos] = 1 + np.floor(np.log1p(-v) / math.log1p(-self.rho)).astype(np.int64)
        return out

    def survival_batch(self, n: np.ndarray) -> np.ndarray:
        return (1.0 - self.omega0) * np.exp(
            np.asarray(n, dtype=float) * math.log1p(-self.rho)
        )


@dataclass(frozen=True)
class TabulatedPrior:
    """Change-point law given by explicit weights ``w_0 .. w_K``.

    With ``tail_ratio`` q in (0, 1) the law continues past the table as
    ``w_K * q**(k-K)``; with ``tail_ratio=None`` it is hard-truncated at K.
    Total mass, tail included, must be 1.
    """

    weights: np.ndarray
    tail_ratio: float | None = None
    _cum: np.ndarray = field(init=False, repr=False)

    kind = "tabulated"

    def __post_init__(self):
        w = _readonly(self.weights)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.size == 0:
            raise ModelValidationError("tabulated prior needs a nonempty weight vector")
        if np.any(w < 0):
            raise ModelValidationError("prior weights must be nonnegative")
        if self.tail_ratio is not None:
            if not 0.0 < self.tail_ratio < 1.0:
                raise ModelValidationError("tail ratio must lie in (0, 1)")
            if w[-1] <= 0.0:
                raise ModelValidationError("analytic tail needs a positive last weight")
        total = math.fsum(w.tolist()) + self._tail_mass()
        if abs(total - 1.0) > PMF_TOL:
            raise ModelValidationError(
                f"prior mass must sum to 1, got {total!r} (hard-truncated priors with a "
                "mass deficit are rejected)"
            )
        if w[0] >= 1.0:
            raise ModelValidationError("mass at 0 must be below 1")
        object.__setattr__(self, "_cum", _readonly(np.cumsum(w)))

    def _tail_mass(self) -> float:
        if self.tail_ratio is None:
            return 0.0
        q = self.tail_ratio
        return float(self.weights[-1]) * q / (1.0 - q)

    @property
    def horizon(self) -> int:
        return self.weights.size - 1

    def pmf(self, k: int) -> float:
        if k < 0:
            return 0.0
        if k <= self.horizon:
            return float(self.weights[k])
        if self.tail_ratio is None:
            return 0.0
        return float(self.weights[-1]) * self.tail_ratio ** (k - self.horizon)

    def survival(self, n: int) -> float:
        if n < 0:
            return 1.0
        if n < self.horizon:
            return max(0.0, 1.0 - float(self._cum[n]))
        if self.tail_ratio is None:
            return 0.0
        q = self.tail_ratio
        return float(self.weights[-1]) * q ** (n - self.horizon + 1) / (1.0 - q)

    def log_survival(self, n: int) -> float:
        s = self.survival(n)
        if s <= 0.0:
            return -math.inf
        return math.log(s)

    def mean(self) -> float:
        ks = np.arange(self.weights.size, dtype=float)
        head = float(ks @ self.weights)
        if self.tail_ratio is None:
            return head
        q = self.tail_ratio
        k0 = float(self.horizon)
        wk = float(self.weights[-1])
        return head + wk * (k0 * q / (1.0 - q) + q / (1.0 - q) ** 2)

    def sample(self, u: float) -> int:
        idx = int(np.searchsorted(self._cum, u, side="right"))
        if idx <= self.horizon:
            return idx
        if self.tail_ratio is None:
            return self.horizon  # u beyond cumulative mass only by rounding
        q = self.tail_ratio
        rem = (u - float(self._cum[-1])) / self._tail_mass()
        rem = min(max(rem, 0.0), 1.0 - 1e-16)
        # conditional tail law of j = k - horizon is geometric with success 1-q
        return self.horizon + 1 + int(math.floor(math.log1p(-rem) / math.log(q)))

    def sample_batch(self, u: np.ndarray) -> np.ndarray:
        return np.array([self.sample(float(v)) for v in u], dtype=np.int64)

    def survival_batch(self, n: np.ndarray) -> np.ndarray:
        return np.array([self.survival(int(v)) for v in np.asarray(n)], dtype=float)


ChangePointPrior = GeometricPrior | TabulatedPrior


def prior_eval(prior: ChangePointPrior, k: int) -> tuple[float, float]:
    """Return ``(pmf at k, survival beyond k)``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return prior.pmf(k), prior.survival(k)


def weight_kn(prior: ChangePointPrior, k: int, n: int) -> float:
    """Posterior mixing weight: the prior mass at k renormalized by the
    survival mass beyond n."""
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    s = prior.survival(n)
    if s <= 0.0:
        raise ExhaustedPriorError(f"prior survival is zero at n={n}")
    return prior.pmf(k) / s


def tail_exponent(prior: ChangePointPrior, window: int = 100) -> tuple[float, bool]:
    """Exponential decay rate of the survival function.

    Exact for the geometric family. For tabulated priors the rate is a
    least-squares slope of the negative log survival over the last usable
    window and is flagged as an estimate.
    """
    if isinstance(prior, GeometricPrior):
        return -math.log1p(-prior.rho), False
    ks, vals = [], []
    kmax = prior.horizon if prior.tail_ratio is None else prior.horizon + window
    for k in range(0, kmax):
        s = prior.survival(k)
        if s < 1e-15:
            break
        ks.append(float(k))
        vals.append(-math.log(s))
    ks_arr = np.asarray(ks[-window:])
    vals_arr = np.asarray(vals[-window:])
    if ks_arr.size < 2:
        raise ValueError("prior survival window too short to estimate a tail rate")
    slope = float(np.polyfit(ks_arr, vals_arr, 1)[0])
    return max(0.0, slope), True


def prior_mean(prior: ChangePointPrior) -> float:
    """Mean change-point time."""
    return prior.mean()
