"""Monte Carlo estimate container and small statistics helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class McEstimate:
    """Point estimate with its standard error and sample accounting."""

    mean: float
    std_error: float
    count: int
    censored_count: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("McEstimate needs at least one sample")
        if not (self.std_error >= 0.0):
            raise ValueError("standard error must be nonnegative")

    def ci(self, z: float = 2.576) -> tuple[float, float]:
        """Normal-approximation confidence interval (99% by default)."""
        return (self.mean - z * self.std_error, self.mean + z * self.std_error)

    @classmethod
    def from_samples(cls, samples, censored_count: int = 0) -> "McEstimate":
        x = np.asarray(samples, dtype=float)
        n = x.size
        if n == 0:
            raise ValueError("no samples")
        se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(x.mean()), se, n, censored_count)

    @classmethod
    def from_batch_means(cls, increments, n_batches: int = 40) -> "McEstimate":
        """Estimate the mean of a correlated sequence with a batch-means
        standard error."""
        x = np.asarray(increments, dtype=float)
        n = x.size
        b = max(2, min(n_batches, n // 2))
        usable = (n // b) * b
        means = x[:usable].reshape(b, -1).mean(axis=1)
        se = float(means.std(ddof=1) / math.sqrt(b))
        return cls(float(x.mean()), se, n)


def pooled_mean_se(sums: np.ndarray, sq_sums: np.ndarray, counts: np.ndarray) -> tuple[float, float, int]:
    """Combine per-batch (sum, sum of squares, count) triples into a pooled
    mean and standard error. Associative, order-independent up to float
    rounding of the fixed left-to-right reduction."""
    total = int(np.sum(counts))
    if total == 0:
        raise ValueError("no samples to pool")
    s = float(np.sum(sums))
    ss = float(np.sum(sq_sums))
    mean = s / total
    if total > 1:
        var = max(0.0, (ss - total * mean * mean) / (total - 1))
        se = math.sqrt(var / total)
    else:
        se = 0.0
    return mean, se, total
