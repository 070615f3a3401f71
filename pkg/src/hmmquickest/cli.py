"""Command-line harness.

Subcommands: simulate, oracle, asymptotics, calibrate, diagnose,
example. Every run is driven by a configuration file plus a few overriding
flags; all numeric output goes to CSV files so downstream tooling can diff
runs byte for byte.

On failure a single JSON object with a machine-readable ``category`` is
printed to stderr and the exit code maps the category:
2 usage/config, 3 model validation, 4 numerical, 5 estimation/calibration,
6 I/O.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace

from . import asymptotics as asy
from .config import config_to_text, load_config
from .detectors import calibrate_threshold
from .errors import HmmQuickestError
from .experiments import (
    ExperimentConfig,
    emit_report,
    exact_oracle,
    example_config,
    run_example,
    simulate_grid,
    slln_diagnostic,
)
from .hmm import kl_information
from .priors import GeometricPrior, prior_mean, tail_exponent

_EXIT_CODES = {
    "config": 2,
    "argument": 2,
    "trivial-solution": 2,
    "model-validation": 3,
    "zero-density": 4,
    "exhausted-prior": 4,
    "calibration-failure": 5,
    "estimation-failure": 5,
    "io": 6,
}


def _add_common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("--config", required=config_required, help="experiment configuration file")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--reps", type=int, default=None, help="override the replication count")
    p.add_argument("--threads", type=int, default=None, help="worker threads (results identical)")
    p.add_argument("--out", default=None, help="output CSV path")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmmquickest",
        description="Bayesian quickest change-point detection for hidden Markov models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="false-alarm and delay grid over thresholds")
    _add_common(p)

    p = sub.add_parser("oracle", help="exact enumeration at small horizons (Bernoulli)")
    _add_common(p)
    p.add_argument("--tables-out", default=None, help="CSV path for the stopping-time tables")

    p = sub.add_parser("asymptotics", help="estimate higher-order constants and predictions")
    _add_common(p)
    p.add_argument("--b-grid", default="4 6 8 10", help="increasing walk thresholds")

    p = sub.add_parser("calibrate", help="Monte Carlo threshold calibration to a target alpha")
    _add_common(p)
    p.add_argument("--alpha", type=float, default=None, help="target false-alarm probability")
    p.add_argument("--budget", type=int, default=None, help="total replication budget")

    p = sub.add_parser("diagnose", help="strong-law settling diagnostic of the LLR")
    _add_common(p)
    p.add_argument("--epsilon", type=float, default=None, help="band half-width (default 0.25 of the estimated rate)")
    p.add_argument("--n-max", type=int, default=300)

    p = sub.add_parser("example", help="run a packaged example end to end")
    _add_common(p, config_required=False)
    p.add_argument("id", type=int, choices=(1, 2, 3))
    p.add_argument("--show-config", action="store_true", help="print the resolved configuration")
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    return _apply_overrides(config, args)


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    fields = {}
    if args.seed is not None:
        fields["seed"] = args.seed
    if args.reps is not None:
        fields["reps"] = args.reps
    if getattr(args, "threads", None) is not None:
        fields["threads"] = args.threads
    return replace(config, **fields) if fields else config


def _write_csv(path: str, header: str, lines: list[str]) -> None:
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(header + "\n")
            for line in lines:
                fh.write(line + "\n")
    except OSError as exc:
        raise _IoError(str(exc)) from exc


class _IoError(HmmQuickestError):
    category = "io"


def _cmd_simulate(args) -> int:
    config = _load(args)
    oc = simulate_grid(config)
    out = args.out or "results.csv"
    try:
        emit_report(oc, out)
    except OSError as exc:
        raise _IoError(str(exc)) from exc
    for row in oc.rows:
        print(
            f"{row.detector} threshold={row.threshold:g} "
            f"pfa={row.pfa.mean:.6g} (se {row.pfa.std_error:.2g}) "
            f"add={row.add.mean:.6g} (se {row.add.std_error:.2g}) "
            f"censored={row.pfa.censored_count + row.add.censored_count}"
        )
    print(f"wrote {out}")
    return 0


def _cmd_oracle(args) -> int:
    config = _load(args)
    rows = []
    tables = []
    for thr in config.resolved_thresholds():
        res = exact_oracle(config, threshold=thr)
        rows.append(
            ",".join(
                [
                    res.detector,
                    repr(res.threshold),
                    repr(res.pfa_exact),
                    repr(res.add_exact[1]),
                    repr(res.add_exact[2]),
                    repr(res.censored_mass),
                    repr(res.conditioning_mass),
                ]
            )
        )
        for k in range(res.p_stop_before.size):
            stop_p = repr(res.stop_pmf[k]) if k < res.stop_pmf.size else ""
            tables.append(f"{res.threshold!r},{k},{res.p_stop_before[k]!r},{stop_p}")
        print(
            f"threshold={thr:g} exact pfa={res.pfa_exact:.8g} "
            f"exact add={res.add_exact[1]:.8g} censored-mass={res.censored_mass:.3g}"
        )
    out = args.out or "oracle.csv"
    _write_csv(
        out,
        "detector,threshold,pfa_exact,add_exact,m2_exact,censored_mass,conditioning_mass",
        rows,
    )
    print(f"wrote {out}")
    if args.tables_out:
        _write_csv(args.tables_out, "threshold,k,p_stop_before_k,stop_pmf", tables)
        print(f"wrote {args.tables_out}")
    return 0


def _cmd_asymptotics(args) -> int:
    config = _load(args)
    if not isinstance(config.prior, GeometricPrior):
        raise HmmQuickestError("higher-order constants assume the geometric prior family")
    asy.lint_nonarithmetic(config.pair)
    rho = config.prior.rho
    b_grid = tuple(float(x) for x in args.b_grid.split())
    kl = kl_information(config.pair, max(100_000, 10 * config.horizon), config.seed)
    over = estimate = asy.estimate_overshoot(
        config.pair, rho, b_grid, config.reps, config.seed, threads=config.threads
    )
    eta = asy.estimate_eta_constant(
        config.pair,
        rho,
        config.reps,
        tail_tol=1e-9,
        seed=config.seed,
        head_start=_r0(config),
        threads=config.threads,
    )
    poisson = None
    if config.delta_correction:
        poisson = asy.estimate_poisson_correction(
            config.pair, rho, horizon=config.horizon, reps=min(config.reps, 20_000),
            seed=config.seed, threads=config.threads,
        )
    c_exact, _ = tail_exponent(config.prior)

    lines = []
    def add_line(name, value, se, extra=""):
        lines.append(f"{name},{value!r},{se!r},{extra}")

    add_line("kl_information", kl.mean, kl.std_error)
    add_line("prior_tail_exponent", c_exact, 0.0, "exact")
    add_line("zeta", over.zeta.mean, over.zeta.std_error, f"stabilized={over.stabilized}")
    add_line("mean_overshoot", over.mean_overshoot.mean, over.mean_overshoot.std_error)
    add_line("eta_constant", eta.value.mean, eta.value.std_error, f"tail_bound={eta.tail_bound:.3g}")
    if poisson is not None:
        add_line("poisson_at_start", poisson.delta_at_w.mean, poisson.delta_at_w.std_error,
                 f"converged={poisson.converged}")
        add_line("poisson_integral", poisson.integral_term.mean, poisson.integral_term.std_error)
    for thr in config.resolved_thresholds():
        fo = asy.first_order_add(kl.mean, c_exact if config.detector_kind == "shiryaev" else 0.0,
                                 math.log(thr))
        pred = asy.ho_add(thr, rho, kl, eta, over, poisson, kind=config.detector_kind)
        pfa_pred = asy.ho_pfa(thr, over.zeta)
        add_line(f"first_order_add@{thr:g}", fo, 0.0)
        add_line(f"ho_add@{thr:g}", pred.value, pred.std_error, pred.label.replace(",", ";"))
        add_line(f"ho_pfa@{thr:g}", pfa_pred.mean, pfa_pred.std_error)
        print(f"threshold={thr:g} first-order add={fo:.4g} higher-order add={pred.value:.4g} "
              f"({pred.label}) predicted pfa={pfa_pred.mean:.4g}")

    out = args.out or "asymptotics.csv"
    _write_csv(out, "constant,value,std_error,detail", lines)
    print(f"wrote {out}")
    return 0


def _r0(config: ExperimentConfig) -> float:
    if config.detector_kind == "gsr":
        return config.head_start
    prior = config.prior
    w0 = prior.pmf(0)
    return w0 / ((1.0 - w0) * prior.rho) if w0 > 0 else 0.0


def _cmd_calibrate(args) -> int:
    config = _load(args)
    alpha = args.alpha if args.alpha is not None else config.target_alpha
    if alpha is None:
        raise HmmQuickestError("calibrate needs --alpha or a target_alpha in the config")
    budget = args.budget if args.budget is not None else 50 * config.reps
    result = calibrate_threshold(alpha, config, budget, config.seed)
    line = ",".join(
        [
            repr(alpha),
            repr(result.threshold),
            repr(result.pfa.mean),
            repr(result.ci[0]),
            repr(result.ci[1]),
            str(result.evaluations),
            str(result.degenerate),
        ]
    )
    out = args.out or "calibration.csv"
    _write_csv(out, "target_alpha,threshold,pfa_hat,ci_low,ci_high,evaluations,degenerate", [line])
    print(
        f"alpha={alpha:g} threshold={result.threshold:.6g} "
        f"achieved pfa={result.pfa.mean:.6g} in [{result.ci[0]:.6g}, {result.ci[1]:.6g}] "
        f"({result.evaluations} evaluations)"
    )
    if result.degenerate:
        print("warning: the two regimes are identical; calibration is degenerate")
    print(f"wrote {out}")
    return 0


def _cmd_diagnose(args) -> int:
    config = _load(args)
    if args.epsilon is None:
        kl = kl_information(config.pair, 100_000, config.seed)
        epsilon = 0.25 * kl.mean
    else:
        epsilon = args.epsilon
    diag = slln_diagnostic(
        config.pair, epsilon, args.n_max, config.reps, config.seed, threads=config.threads
    )
    lines = [f"{n},{diag.p_tau_gt[n]!r}" for n in range(diag.n_max + 1)]
    out = args.out or "slln.csv"
    _write_csv(out, "n,p_tau_gt_n", lines)
    print(
        f"epsilon={epsilon:.6g} kl_hat={diag.kl_hat:.6g} "
        f"tau quantiles: 50%={diag.tau_quantiles[0.5]:g} 90%={diag.tau_quantiles[0.9]:g} "
        f"99%={diag.tau_quantiles[0.99]:g} non-settled={diag.non_settled_fraction:.4g}"
    )
    print(f"wrote {out}")
    return 0


def _cmd_example(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.config:
        config = _apply_overrides(load_config(args.config), args)
        from .experiments import ExampleResult, simulate_grid as _grid

        result = ExampleResult(args.id, config, _grid(config), {})
    else:
        result = run_example(args.id, overrides)
    if args.show_config:
        print(config_to_text(result.config), end="")
    out = args.out or f"example{args.id}.csv"
    try:
        emit_report(result.operating_characteristic, out)
    except OSError as exc:
        raise _IoError(str(exc)) from exc
    for row in result.operating_characteristic.rows:
        print(
            f"{row.detector} threshold={row.threshold:g} pfa={row.pfa.mean:.6g} "
            f"add={row.add.mean:.6g}"
        )
    for name, value in result.checks.items():
        print(f"check {name} = {value:.6g}")
    print(f"wrote {out}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "oracle": _cmd_oracle,
    "asymptotics": _cmd_asymptotics,
    "calibrate": _cmd_calibrate,
    "diagnose": _cmd_diagnose,
    "example": _cmd_example,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except HmmQuickestError as exc:
        print(json.dumps({"category": exc.category, "message": str(exc)}), file=sys.stderr)
        return _EXIT_CODES.get(exc.category, 1)
    except (ValueError, KeyError) as exc:
        print(json.dumps({"category": "argument", "message": str(exc)}), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"category": "io", "message": str(exc)}), file=sys.stderr)
        return 6


if __name__ == "__main__":
    sys.exit(main())
