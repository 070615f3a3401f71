"""Monte Carlo experiment harness: operating-characteristic estimators, an
exact small-horizon enumeration oracle, law-of-large-numbers diagnostics,
the three worked example models, and delimited report output.

Estimation conventions
----------------------
False-alarm probability is estimated under the no-change law only: each
replication stops the detector and scores the prior survival mass beyond the
stopping time, an exact rearrangement of the defining prior-weighted sum
with much lower variance than binary outcomes. Replications that reach the
horizon are scored with the survival at the horizon (a conservative
overestimate) and counted as censored.

Detection delay is estimated with the change point sampled from the prior
and the path planted accordingly; the conditional moments average over
replications that stopped at or after the change. Horizon-censored
replications are excluded from the delay average and reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import engine
from .detectors import gsr_threshold, shiryaev_threshold
from .errors import ConfigError, EstimationError
from .hmm import (
    Ar1GaussianEmission,
    BernoulliEmission,
    GaussianEmission,
    HmmSpec,
    RegimePair,
    kl_information,
)
from .mc import McEstimate, pooled_mean_se
from .priors import ChangePointPrior, GeometricPrior, prior_mean


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs: the model pair, the change-point
    prior, the detector block, and the run parameters."""

    pair: RegimePair
    prior: ChangePointPrior
    detector_kind: str = "shiryaev"
    thresholds: tuple[float, ...] = ()
    target_alpha: float | None = None
    head_start: float = 0.0
    reps: int = 10_000
    horizon: int = 300
    seed: int = 1
    llr_mode: str = "exact"
    delta_correction: bool = False
    threads: int = 1
    moments: int = 2

    def __post_init__(self):
        if self.detector_kind not in ("shiryaev", "gsr"):
            raise ConfigError(f"unknown detector kind {self.detector_kind!r}")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if self.llr_mode not in ("exact", "restart"):
            raise ConfigError(f"unknown llr mode {self.llr_mode!r}")
        if any(t <= 0 for t in self.thresholds):
            raise ConfigError("thresholds must be positive")
        if not self.thresholds and self.target_alpha is None:
            raise ConfigError("need either thresholds or a target alpha")
        if self.head_start < 0:
            raise ConfigError("head start must be nonnegative")
        if self.moments < 1:
            raise ConfigError("moments must be at least 1")

    def resolved_thresholds(self) -> tuple[float, ...]:
        if self.thresholds:
            return tuple(sorted(self.thresholds))
        if self.detector_kind == "shiryaev":
            return (shiryaev_threshold(self.target_alpha, self.prior.pmf(0)),)
        return (gsr_threshold(self.target_alpha, prior_mean(self.prior), self.head_start),)


def _require_streaming(config: ExperimentConfig):
    if config.llr_mode != "exact":
        raise ConfigError(
            "the streaming detectors use the exact likelihood-ratio stream; "
            "the stationary-restart mode only applies to segment likelihoods"
        )


# ---------------------------------------------------------------------------
# Operating-characteristic estimators
# ---------------------------------------------------------------------------

def estimate_pfa(config: ExperimentConfig, threshold: float | None = None, seed: int | None = None) -> McEstimate:
    """Prior-weighted false-alarm probability of the configured detector."""
    _require_streaming(config)
    thr = float(threshold) if threshold is not None else config.resolved_thresholds()[0]
    master = config.seed if seed is None else seed
    log_thr = math.log(thr)

    def one_batch(start, count):
        seeds = engine.rep_seed_sequences(master, engine.PURPOSE_PFA, start, count)
        nus = np.full(count, engine.NO_CHANGE, dtype=np.int64)
        g = engine.simulate_increments(config.pair, nus, config.horizon, seeds)
        stop, _ = engine.detector_pass(g, config.detector_kind, config.prior, config.head_start, log_thr)
        detected = stop > 0
        t_eff = np.where(detected, stop, config.horizon)
        scores = config.prior.survival_batch(t_eff)
        return scores.sum(), (scores**2).sum(), count, int((~detected).sum())

    parts = engine.map_batches(one_batch, config.reps, config.threads)
    mean, se, n = pooled_mean_se(
        np.array([p[0] for p in parts]),
        np.array([p[1] for p in parts]),
        np.array([p[2] for p in parts]),
    )
    censored = sum(p[3] for p in parts)
    return McEstimate(mean, se, n, censored)


def estimate_add(
    config: ExperimentConfig,
    threshold: float | None = None,
    moments: tuple[int, ...] = (1,),
    seed: int | None = None,
) -> dict[int, McEstimate]:
    """Conditional detection-delay moments with the change point sampled
    from the prior."""
    _require_streaming(config)
    if any(m < 1 for m in moments):
        raise ValueError("moment orders must be positive")
    thr = float(threshold) if threshold is not None else config.resolved_thresholds()[0]
    master = config.seed if seed is None else seed
    log_thr = math.log(thr)

    def one_batch(start, count):
        seeds = engine.rep_seed_sequences(master, engine.PURPOSE_ADD, start, count)
        g, nus = engine.simulate_increments_prior(config.pair, config.prior, config.horizon, seeds)
        stop, _ = engine.detector_pass(g, config.detector_kind, config.prior, config.head_start, log_thr)
        detected = stop > 0
        cond = detected & (stop >= nus)
        delays = (stop - nus)[cond].astype(float)
        out = {}
        for m in moments:
            x = delays**m
            out[m] = (x.sum(), (x**2).sum(), x.size)
        return out, int((~detected).sum())

    parts = engine.map_batches(one_batch, config.reps, config.threads)
    censored = sum(p[1] for p in parts)
    results: dict[int, McEstimate] = {}
    for m in moments:
        sums = np.array([p[0][m][0] for p in parts])
        sqs = np.array([p[0][m][1] for p in parts])
        counts = np.array([p[0][m][2] for p in parts])
        if counts.sum() == 0:
            raise EstimationError(
                "no replication produced a detection at or after the change; "
                "all delays are censored"
            )
        mean, se, n = pooled_mean_se(sums, sqs, counts)
        results[m] = McEstimate(mean, se, n, censored)
    return results


def estimate_conditional_add(
    config: ExperimentConfig, threshold: float | None = None, seed: int | None = None
) -> McEstimate:
    """Expected stopping time with the change planted at time 1 and the
    chain started from the pre-change stationary law.

    This is the quantity the higher-order delay expansion approximates
    directly (the conditional average detection delay of a fresh run).
    """
    _require_streaming(config)
    thr = float(threshold) if threshold is not None else config.resolved_thresholds()[0]
    master = config.seed if seed is None else seed
    log_thr = math.log(thr)

    def one_batch(start, count):
        seeds = engine.rep_seed_sequences(master, engine.PURPOSE_ADD, start, count)
        nus = np.ones(count, dtype=np.int64)
        g = engine.simulate_increments(config.pair, nus, config.horizon, seeds)
        stop, _ = engine.detector_pass(g, config.detector_kind, config.prior, config.head_start, log_thr)
        detected = stop > 0
        x = stop[detected].astype(float)
        return x.sum(), (x**2).sum(), x.size, int((~detected).sum())

    parts = engine.map_batches(one_batch, config.reps, config.threads)
    censored = sum(p[3] for p in parts)
    counts = np.array([p[2] for p in parts])
    if counts.sum() == 0:
        raise EstimationError("no replication stopped within the horizon")
    mean, se, n = pooled_mean_se(
        np.array([p[0] for p in parts]), np.array([p[1] for p in parts]), counts
    )
    return McEstimate(mean, se, n, censored)


# ---------------------------------------------------------------------------
# Result containers and the delimited report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdRow:
    detector: str
    threshold: float
    pfa: McEstimate
    add: McEstimate
    m2: McEstimate | None
    reps: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.pfa.mean <= 1.0:
            raise ValueError("false-alarm estimate must lie in [0, 1]")
        if self.add.mean < 0:
            raise ValueError("delay estimate must be nonnegative")


@dataclass(frozen=True)
class OperatingCharacteristic:
    rows: tuple[ThresholdRow, ...]


def simulate_grid(config: ExperimentConfig) -> OperatingCharacteristic:
    """Estimate the false-alarm probability and delay moments on the
    configured threshold grid."""
    want_m2 = config.moments >= 2
    moments = (1, 2) if want_m2 else (1,)
    rows = []
    for thr in config.resolved_thresholds():
        pfa = estimate_pfa(config, threshold=thr)
        add = estimate_add(config, threshold=thr, moments=moments)
        rows.append(
            ThresholdRow(
                detector=config.detector_kind,
                threshold=thr,
                pfa=pfa,
                add=add[1],
                m2=add.get(2),
                reps=config.reps,
                seed=config.seed,
            )
        )
    return OperatingCharacteristic(rows=tuple(rows))


def emit_report(results: OperatingCharacteristic, path) -> None:
    """Write the per-threshold table as CSV.

    Full-precision decimal numbers, rows ordered by detector then ascending
    threshold, Unix newlines; identical inputs give byte-identical files.
    """
    if not results.rows:
        raise ValueError("no results to report")
    header = "detector,threshold,pfa_hat,pfa_se,add_hat,add_se,m2_hat,m2_se,reps,censored,seed"
    lines = [header]
    for row in sorted(results.rows, key=lambda r: (r.detector, r.threshold)):
        censored = row.pfa.censored_count + row.add.censored_count
        m2_hat = repr(row.m2.mean) if row.m2 is not None else ""
        m2_se = repr(row.m2.std_error) if row.m2 is not None else ""
        lines.append(
            ",".join(
                [
                    row.detector,
                    repr(row.threshold),
                    repr(row.pfa.mean),
                    repr(row.pfa.std_error),
                    repr(row.add.mean),
                    repr(row.add.std_error),
                    m2_hat,
                    m2_se,
                    str(row.reps),
                    str(censored),
                    str(row.seed),
                ]
            )
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Exact enumeration oracle (Bernoulli emissions, small horizons)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleResult:
    threshold: float
    detector: str
    pfa_exact: float
    p_stop_before: np.ndarray  # index k: probability under no change that T < k, k = 0..H+1
    stop_pmf: np.ndarray       # index n: probability under no change that T = n, n = 0..H
    censored_mass: float       # no-change mass never stopping within the horizon
    add_exact: dict[int, float]
    conditioning_mass: float


def _forward_prefix_probs(pair: RegimePair, obs: np.ndarray, change_at) -> np.ndarray:
    """Exact joint probabilities of every observation prefix under a change
    at the given time (inf for never), by the plain linear-domain forward
    recursion."""
    h = obs.size - 1
    post0 = change_at == 0
    spec0 = pair.post if post0 else pair.pre
    alpha = spec0.stationary * np.exp(spec0.emission.initial_log_density(obs[0]))
    out = np.empty(h + 1)
    out[0] = alpha.sum()
    for t in range(1, h + 1):
        spec = pair.post if t >= change_at else pair.pre
        f = np.exp(spec.emission.log_density(obs[t], obs[t - 1]))
        alpha = (alpha @ spec.transition) * f
        out[t] = alpha.sum()
    return out


def exact_oracle(config: ExperimentConfig, threshold: float | None = None) -> OracleResult:
    """Exhaustive enumeration of all observation sequences up to the
    configured horizon with exact path probabilities under every change
    hypothesis, and the exact detector trajectory on each sequence.

    Requires Bernoulli emissions; the state space of sequences must stay
    under the enumeration cap.
    """
    pair = config.pair
    if not isinstance(pair.pre.emission, BernoulliEmission):
        raise ValueError("the enumeration oracle requires Bernoulli emissions")
    h = config.horizon
    d = pair.num_states
    if (2**h) * (d**h) > 1_000_000:
        raise ValueError(f"enumeration of 2^{h} * {d}^{h} terms exceeds the cap")
    thr = float(threshold) if threshold is not None else config.resolved_thresholds()[0]
    log_thr = math.log(thr)
    prior = config.prior

    surv = np.array([prior.survival(n) for n in range(h + 1)])
    pmf = np.array([prior.pmf(k) for k in range(h + 1)])

    p_stop_before = np.zeros(h + 2)
    stop_pmf = np.zeros(h + 1)
    pfa_exact = 0.0
    censored_mass = 0.0
    add_num: dict[int, float] = {m: 0.0 for m in (1, 2)}
    add_den = 0.0

    for bits in range(2 ** (h + 1)):
        obs = np.array([(bits >> t) & 1 for t in range(h + 1)], dtype=float)
        prefix_pre = _forward_prefix_probs(pair, obs, math.inf)
        prefix_post = _forward_prefix_probs(pair, obs, 0)
        p_inf = prefix_pre[-1]

        lam = (prefix_post[1:] / prefix_post[:-1]) / (prefix_pre[1:] / prefix_pre[:-1])
        log_lam = np.log(lam)

        stop_t = 0  # 0 encodes "never within horizon"
        if config.detector_kind == "shiryaev":
            log_num = math.log(pmf[0]) if pmf[0] > 0 else -math.inf
            for t in range(1, h + 1):
                if surv[t] <= 0.0:
                    raise EstimationError(f"prior survival is zero at oracle step {t}")
                lw = math.log(pmf[t]) if pmf[t] > 0 else -math.inf
                log_num = np.logaddexp(log_num, lw) + log_lam[t - 1]
                if log_num - math.log(surv[t]) >= log_thr:
                    stop_t = t
                    break
        else:
            log_r = math.log(config.head_start) if config.head_start > 0 else -math.inf
            for t in range(1, h + 1):
                log_r = np.logaddexp(0.0, log_r) + log_lam[t - 1]
                if log_r >= log_thr:
                    stop_t = t
                    break

        if stop_t == 0:
            censored_mass += p_inf
            pfa_exact += p_inf * surv[h]
        else:
            stop_pmf[stop_t] += p_inf
            pfa_exact += p_inf * surv[stop_t]
            for k in range(stop_t + 1, h + 2):
                p_stop_before[k] += p_inf
            # conditional delay contributions for every change time k <= T
            for k in range(0, stop_t + 1):
                joint_k = _forward_prefix_probs(pair, obs, k)[-1]
                weight = pmf[k] * joint_k
                add_den += weight
                delay = stop_t - k
                add_num[1] += weight * delay
                add_num[2] += weight * delay * delay

    # with no stopping sequence there is no conditional delay to report
    add_exact = {m: add_num[m] / add_den for m in add_num} if add_den > 0 else {}
    return OracleResult(
        threshold=thr,
        detector=config.detector_kind,
        pfa_exact=pfa_exact,
        p_stop_before=p_stop_before,
        stop_pmf=stop_pmf,
        censored_mass=censored_mass,
        add_exact=add_exact,
        conditioning_mass=add_den,
    )


# ---------------------------------------------------------------------------
# Strong-law diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SllnDiagnostic:
    epsilon: float
    n_max: int
    kl_hat: float
    tau_quantiles: dict[float, float]
    non_settled_fraction: float
    p_tau_gt: np.ndarray      # index n: empirical P(tau > n), n = 0..n_max
    ratio_mean: np.ndarray    # mean of S_n / n over replications
    ratio_std: np.ndarray


def slln_diagnostic(
    pair: RegimePair,
    epsilon: float,
    n_max: int,
    reps: int,
    seed: int,
    threads: int = 1,
) -> SllnDiagnostic:
    """Empirical law-of-large-numbers settling diagnostic for the normalized
    log-likelihood ratio under the post-change law.

    For each replication the last time the normalized sum sits outside the
    epsilon band around the estimated information number is recorded; a
    replication still outside at the end is flagged unsettled.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if n_max < 2:
        raise ValueError("n_max must be at least 2")

    taus = []
    ratio_sum = np.zeros(n_max)
    ratio_sq = np.zeros(n_max)
    end_ratios = []
    batches = []

    def one_batch(start, count):
        seeds = engine.rep_seed_sequences(seed, engine.PURPOSE_SLLN, start, count)
        nus = np.ones(count, dtype=np.int64)
        g = engine.simulate_increments(pair, nus, n_max, seeds)
        s = np.cumsum(g, axis=1)
        return s / np.arange(1, n_max + 1)[None, :]

    for ratios in engine.map_batches(one_batch, reps, threads):
        batches.append(ratios)
        end_ratios.append(ratios[:, -1])
        ratio_sum += ratios.sum(axis=0)
        ratio_sq += (ratios**2).sum(axis=0)
    kl_hat = float(np.concatenate(end_ratios).mean())

    for ratios in batches:
        outside = np.abs(ratios - kl_hat) > epsilon
        any_out = outside.any(axis=1)
        last = np.zeros(ratios.shape[0], dtype=np.int64)
        rev = outside[:, ::-1]
        last[any_out] = n_max - rev.argmax(axis=1)[any_out]
        taus.append(last)
    tau = np.concatenate(taus)

    qs = {q: float(np.quantile(tau, q)) for q in (0.5, 0.9, 0.99)}
    p_tau_gt = np.array([(tau > n).mean() for n in range(n_max + 1)])
    mean = ratio_sum / reps
    var = np.maximum(0.0, ratio_sq / reps - mean**2)
    return SllnDiagnostic(
        epsilon=epsilon,
        n_max=n_max,
        kl_hat=kl_hat,
        tau_quantiles=qs,
        non_settled_fraction=float((tau >= n_max).mean()),
        p_tau_gt=p_tau_gt,
        ratio_mean=mean,
        ratio_std=np.sqrt(var),
    )


# ---------------------------------------------------------------------------
# Worked examples
# ---------------------------------------------------------------------------

EXAMPLE_DEFAULT_SEED = 20260810


def example_pair(example_id: int) -> RegimePair:
    """The three stock model pairs.

    1. Two-state Bernoulli track management: per-state detection
       probabilities before the change, pure false alarms after.
    2. Two-state Gaussian regime switch: unit-variance observations whose
       per-state means shift at the change.
    3. AR(1) correlation change: a single post-change state with a larger
       autoregression coefficient.
    """
    if example_id == 1:
        trans = [[0.85, 0.15], [0.15, 0.85]]
        pre = HmmSpec(np.array(trans), BernoulliEmission(np.array([0.8, 0.45])))
        post = HmmSpec(np.array(trans), BernoulliEmission(np.array([0.18, 0.18])))
        return RegimePair(pre=pre, post=post)
    if example_id == 2:
        trans = [[0.9, 0.1], [0.1, 0.9]]
        pre = HmmSpec(np.array(trans), GaussianEmission(np.array([0.0, 1.0]), np.array([1.0, 1.0])))
        post = HmmSpec(np.array(trans), GaussianEmission(np.array([1.0, 2.0]), np.array([1.0, 1.0])))
        return RegimePair(pre=pre, post=post)
    if example_id == 3:
        pre = HmmSpec(np.array([[1.0]]), Ar1GaussianEmission(np.array([0.0])))
        post = HmmSpec(np.array([[1.0]]), Ar1GaussianEmission(np.array([0.5])))
        return RegimePair(pre=pre, post=post)
    raise ValueError(f"unknown example id {example_id!r}")


def example_config(example_id: int, **overrides) -> ExperimentConfig:
    base = ExperimentConfig(
        pair=example_pair(example_id),
        prior=GeometricPrior(omega0=0.0, rho=0.1),
        detector_kind="shiryaev",
        thresholds=(9.0, 99.0, 999.0),
        reps=10_000,
        horizon=400,
        seed=EXAMPLE_DEFAULT_SEED,
    )
    if "rho" in overrides or "omega0" in overrides:
        base = replace(
            base,
            prior=GeometricPrior(
                omega0=overrides.pop("omega0", 0.0), rho=overrides.pop("rho", 0.1)
            ),
        )
    return replace(base, **overrides) if overrides else base


def two_state_gaussian_loglr(pair: RegimePair, observations) -> np.ndarray:
    """Log likelihood ratio along a path via the paired two-state joint
    recursions, one pair of scalar joints per regime, rescaled each step.

    A cross-check for the generic matrix filter on the two-state Gaussian
    example; the two routes must agree to near machine precision.
    """
    if pair.num_states != 2 or not isinstance(pair.pre.emission, GaussianEmission):
        raise ValueError("the paired recursion applies to the two-state Gaussian example")
    obs = np.asarray(observations, dtype=float)

    def run(spec: HmmSpec) -> np.ndarray:
        trans = spec.transition
        em = spec.emission
        out = np.empty(obs.size)
        joint = spec.stationary * np.exp(em.log_density(obs[0]))  # [state 0, state 1]
        tot = joint.sum()
        joint = joint / tot
        logp = math.log(tot)
        out[0] = logp
        for n in range(1, obs.size):
            f = np.exp(em.log_density(obs[n]))
            nxt0 = (joint[0] * trans[0, 0] + joint[1] * trans[1, 0]) * f[0]
            nxt1 = (joint[0] * trans[0, 1] + joint[1] * trans[1, 1]) * f[1]
            tot = nxt0 + nxt1
            joint = np.array([nxt0 / tot, nxt1 / tot])
            logp += math.log(tot)
            out[n] = logp
        return out

    return run(pair.post) - run(pair.pre)


@dataclass(frozen=True)
class ExampleResult:
    example_id: int
    config: ExperimentConfig
    operating_characteristic: OperatingCharacteristic
    checks: dict[str, float]


def run_example(example_id: int, overrides: dict | None = None) -> ExampleResult:
    """Run one worked example end to end: operating characteristics over the
    threshold grid plus the example-specific cross-checks."""
    config = example_config(example_id, **(overrides or {}))
    oc = simulate_grid(config)
    checks: dict[str, float] = {}

    if example_id == 2:
        from .hmm import sample_path
        from .likelihood import filter_advance, filter_init

        path = sample_path(config.pair, 0, 200, np.random.SeedSequence(config.seed, spawn_key=(99,)))
        specialized = two_state_gaussian_loglr(config.pair, path.observations)
        pre = filter_init(config.pair.pre, path.observations[0], "pre")
        post = filter_init(config.pair.post, path.observations[0], "post")
        generic = np.empty(path.observations.size)
        generic[0] = post.log_norm - pre.log_norm
        for i in range(1, path.observations.size):
            pre = filter_advance(pre, path.observations[i])
            post = filter_advance(post, path.observations[i])
            generic[i] = post.log_norm - pre.log_norm
        denom = np.maximum(1.0, np.abs(generic))
        checks["recursion_filter_max_rel_diff"] = float(
            np.max(np.abs(specialized - generic) / denom)
        )
    if example_id == 3:
        a0 = float(config.pair.pre.emission.coeffs[0])
        a1 = float(config.pair.post.emission.coeffs[0])
        closed = (a1 - a0) ** 2 / (2.0 * (1.0 - a1**2))
        est = kl_information(config.pair, 100_000, np.random.SeedSequence(config.seed, spawn_key=(98,)))
        checks["kl_hat"] = est.mean
        checks["kl_closed_form"] = closed
        checks["kl_rel_err"] = abs(est.mean - closed) / closed

    return ExampleResult(
        example_id=example_id,
        config=config,
        operating_characteristic=oc,
        checks=checks,
    )
