"""Sequential stopping rules over log-likelihood-ratio increment streams.

Both detectors are O(1)-per-step state machines kept entirely in the log
domain. The Bayesian statistic is carried as its numerator (the prior-mass
weighted sum of likelihood-ratio products); dividing by the prior survival
mass at read time reproduces the posterior-odds statistic for arbitrary
priors, not just geometric ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    CalibrationError,
    ExhaustedPriorError,
    TrivialSolutionError,
)
from .priors import ChangePointPrior, prior_mean


def shiryaev_threshold(alpha: float, omega0: float = 0.0) -> float:
    """Conservative threshold guaranteeing false-alarm probability <= alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if alpha >= 1.0 - omega0:
        raise TrivialSolutionError(
            f"alpha={alpha} >= 1 - omega0={1.0 - omega0}: stopping immediately already "
            "meets the constraint"
        )
    return (1.0 - alpha) / alpha


def gsr_threshold(alpha: float, nu_mean: float, head_start: float = 0.0) -> float:
    """Submartingale-bound threshold for the generalized SR rule."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not math.isfinite(nu_mean):
        raise ValueError("the prior mean must be finite for the GSR threshold")
    if head_start < 0:
        raise ValueError("head start must be nonnegative")
    return (nu_mean - 1.0 + head_start) / alpha


@dataclass(frozen=True)
class ShiryaevDetector:
    """Posterior-odds detector state.

    ``log_numerator`` carries log of the weighted likelihood-ratio sum; the
    statistic itself is that divided by the prior survival mass at the
    current step.
    """

    prior: ChangePointPrior
    log_threshold: float
    log_numerator: float
    step_index: int

    @classmethod
    def init(cls, prior: ChangePointPrior, threshold: float) -> "ShiryaevDetector":
        if threshold <= 0:
            raise ValueError("threshold must be positive")
        w0 = prior.pmf(0)
        if w0 >= 1.0:
            raise TrivialSolutionError("prior mass at zero is 1; nothing to detect")
        log_num = math.log(w0) if w0 > 0 else -math.inf
        return cls(
            prior=prior,
            log_threshold=math.log(threshold),
            log_numerator=log_num,
            step_index=0,
        )

    @property
    def log_statistic(self) -> float:
        log_s = self.prior.log_survival(self.step_index)
        if log_s == -math.inf:
            raise ExhaustedPriorError(
                f"prior survival is zero at step {self.step_index}"
            )
        return self.log_numerator - log_s

    @property
    def statistic(self) -> float:
        return math.exp(self.log_statistic)

    @property
    def posterior(self) -> float:
        """Posterior probability that the change has already happened."""
        return 1.0 / (1.0 + math.exp(-self.log_statistic))

    def step(self, log_lr: float) -> "ShiryaevDetector":
        if not math.isfinite(log_lr):
            raise ValueError(f"log likelihood ratio must be finite, got {log_lr!r}")
        n = self.step_index + 1
        if self.prior.survival(n) <= 0.0:
            raise ExhaustedPriorError(f"prior survival is zero at step {n}")
        w = self.prior.pmf(n)
        log_w = math.log(w) if w > 0 else -math.inf
        log_num = np.logaddexp(self.log_numerator, log_w) + log_lr
        return replace(self, log_numerator=float(log_num), step_index=n)

    @property
    def crossed(self) -> bool:
        return self.step_index >= 1 and self.log_statistic >= self.log_threshold


@dataclass(frozen=True)
class GsrDetector:
    """Generalized Shiryaev-Roberts detector state with a head start."""

    head_start: float
    log_threshold: float
    log_statistic: float
    step_index: int

    @classmethod
    def init(cls, head_start: float, threshold: float) -> "GsrDetector":
        if head_start < 0:
            raise ValueError("head start must be nonnegative")
        if threshold <= 0:
            raise ValueError("threshold must be positive")
        log_r = math.log(head_start) if head_start > 0 else -math.inf
        return cls(
            head_start=head_start,
            log_threshold=math.log(threshold),
            log_statistic=log_r,
            step_index=0,
        )

    @property
    def statistic(self) -> float:
        return math.exp(self.log_statistic)

    def step(self, log_lr: float) -> "GsrDetector":
        if not math.isfinite(log_lr):
            raise ValueError(f"log likelihood ratio must be finite, got {log_lr!r}")
        log_r = float(np.logaddexp(0.0, self.log_statistic) + log_lr)
        return replace(self, log_statistic=log_r, step_index=self.step_index + 1)

    @property
    def crossed(self) -> bool:
        return self.step_index >= 1 and self.log_statistic >= self.log_threshold


Detector = ShiryaevDetector | GsrDetector


@dataclass(frozen=True)
class DetectionOutcome:
    """Result of running a detector over a stream.

    ``stop_time`` is None when the horizon was reached without a crossing;
    ``log_overshoot`` is the stopped statistic minus the log threshold and is
    negative for censored runs.
    """

    stop_time: int | None
    stopped_log_statistic: float
    log_overshoot: float
    censored: bool


def run_detector(detector: Detector, increments, max_horizon: int) -> DetectionOutcome:
    """Feed increments to the detector until the first crossing.

    The comparison is >= and a tie counts as a stop. Stops are only declared
    from step 1 on, even if the initial statistic already sits above the
    threshold.
    """
    if max_horizon < 1:
        raise ValueError("max_horizon must be at least 1")
    state = detector
    for g in increments:
        state = state.step(float(g))
        if state.log_statistic >= state.log_threshold:
            return DetectionOutcome(
                stop_time=state.step_index,
                stopped_log_statistic=state.log_statistic,
                log_overshoot=state.log_statistic - state.log_threshold,
                censored=False,
            )
        if state.step_index >= max_horizon:
            break
    return DetectionOutcome(
        stop_time=None,
        stopped_log_statistic=state.log_statistic if state.step_index >= 1 else -math.inf,
        log_overshoot=(state.log_statistic - state.log_threshold) if state.step_index >= 1 else -math.inf,
        censored=True,
    )


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    pfa: object  # McEstimate
    ci: tuple[float, float]
    evaluations: int
    degenerate: bool


def calibrate_threshold(alpha: float, config, mc_budget: int, seed: int) -> CalibrationResult:
    """Bisection on the log threshold until the Monte Carlo false-alarm
    confidence interval brackets the target.

    Evaluations share one master seed so the estimated false-alarm curve is
    monotone in the threshold (common random numbers), which keeps the
    bisection well behaved. The analytic conservative threshold is the upper
    bracket, so the calibrated value never exceeds it.
    """
    from .experiments import estimate_pfa

    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    degenerate = config.pair.is_degenerate

    if config.detector_kind == "shiryaev":
        hi = shiryaev_threshold(alpha, config.prior.pmf(0))
    else:
        hi = gsr_threshold(alpha, prior_mean(config.prior), config.head_start)

    evals = 0
    cache: dict[float, object] = {}

    def pfa_at(threshold: float):
        nonlocal evals
        if threshold not in cache:
            if (evals + 1) * config.reps > mc_budget:
                raise CalibrationError(
                    f"budget of {mc_budget} replications exhausted after {evals} "
                    "evaluations without bracketing the target",
                    bracket=best_bracket(),
                )
            evals += 1
            cache[threshold] = estimate_pfa(config, threshold=threshold, seed=seed)
        return cache[threshold]

    def best_bracket():
        lows = [t for t, e in cache.items() if e.mean >= alpha]
        highs = [t for t, e in cache.items() if e.mean < alpha]
        return (max(lows) if lows else None, min(highs) if highs else None)

    def done(threshold: float, est) -> CalibrationResult | None:
        lo_ci, hi_ci = est.ci()
        if lo_ci <= alpha <= hi_ci:
            return CalibrationResult(threshold, est, (lo_ci, hi_ci), evals, degenerate)
        return None

    est_hi = pfa_at(hi)
    hit = done(hi, est_hi)
    if hit:
        return hit

    lo = hi
    floor = 1e-6
    while True:
        lo = lo / 8.0
        if lo < floor:
            raise CalibrationError(
                "could not find a lower bracket: the false-alarm probability stays "
                f"below {alpha} down to threshold {lo * 8.0}",
                bracket=best_bracket(),
            )
        est_lo = pfa_at(lo)
        hit = done(lo, est_lo)
        if hit:
            return hit
        if est_lo.mean > alpha:
            break

    hi_cur, lo_cur = hi, lo
    while True:
        mid = math.exp(0.5 * (math.log(lo_cur) + math.log(hi_cur)))
        if mid in cache or mid in (lo_cur, hi_cur):
            raise CalibrationError(
                "bisection interval collapsed before the confidence interval "
                "bracketed the target; raise the replication count",
                bracket=(lo_cur, hi_cur),
            )
        est = pfa_at(mid)
        hit = done(mid, est)
        if hit:
            return hit
        if est.mean < alpha:
            hi_cur = mid
        else:
            lo_cur = mid
