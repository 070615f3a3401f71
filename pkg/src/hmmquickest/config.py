"""Experiment configuration files.

Flat key-value text with sections, INI style::

    [model.pre]
    states = 2
    emission = bernoulli
    transition = 0.8 0.2 ; 0.2 0.8
    probs = 0.65 0.35

    [model.post]
    states = 2
    emission = bernoulli
    transition = 0.8 0.2 ; 0.2 0.8
    probs = 0.1 0.1

    [prior]
    kind = geometric
    omega0 = 0.0
    rho = 0.1

    [detector]
    kind = shiryaev
    thresholds = 9 99 999

    [run]
    reps = 10000
    horizon = 400
    seed = 1

Unknown sections or keys are errors: a typo must never silently change an
experiment.
"""

from __future__ import annotations

import configparser

import numpy as np

from .errors import ConfigError
from .experiments import ExperimentConfig
from .hmm import (
    Ar1GaussianEmission,
    BernoulliEmission,
    GaussianEmission,
    HmmSpec,
    RegimePair,
)
from .priors import GeometricPrior, TabulatedPrior

_MODEL_KEYS = {
    "gaussian": {"states", "emission", "transition", "means", "stds"},
    "bernoulli": {"states", "emission", "transition", "probs"},
    "ar1": {"states", "emission", "transition", "coeffs"},
}
_PRIOR_KEYS = {
    "geometric": {"kind", "omega0", "rho"},
    "tabulated": {"kind", "weights", "tail_ratio"},
}
_DETECTOR_KEYS = {"kind", "thresholds", "target_alpha", "head_start"}
_RUN_KEYS = {"reps", "horizon", "seed", "threads", "llr_mode", "delta_correction", "moments"}
_SECTIONS = {"model.pre", "model.post", "prior", "detector", "run"}


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.replace(",", " ").split()], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"could not parse number list {text!r}") from exc


def _matrix(text: str) -> np.ndarray:
    rows = [r.strip() for r in text.split(";") if r.strip()]
    parsed = [_floats(r) for r in rows]
    width = {p.size for p in parsed}
    if len(width) != 1:
        raise ConfigError("transition rows have unequal lengths")
    return np.vstack(parsed)


def _check_keys(section: str, present, allowed) -> None:
    unknown = set(present) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def _build_spec(section: str, items: dict[str, str]) -> HmmSpec:
    kind = items.get("emission")
    if kind not in _MODEL_KEYS:
        raise ConfigError(f"[{section}] emission must be one of {sorted(_MODEL_KEYS)}")
    _check_keys(section, items, _MODEL_KEYS[kind])
    missing = _MODEL_KEYS[kind] - set(items)
    if missing:
        raise ConfigError(f"missing key(s) in [{section}]: {', '.join(sorted(missing))}")
    states = int(items["states"])
    transition = _matrix(items["transition"])
    if transition.shape != (states, states):
        raise ConfigError(f"[{section}] transition must be {states}x{states}")
    if kind == "gaussian":
        emission = GaussianEmission(_floats(items["means"]), _floats(items["stds"]))
    elif kind == "bernoulli":
        emission = BernoulliEmission(_floats(items["probs"]))
    else:
        emission = Ar1GaussianEmission(_floats(items["coeffs"]))
    if emission.num_states != states:
        raise ConfigError(f"[{section}] emission parameters must have {states} entries")
    return HmmSpec(transition, emission)


def _build_prior(items: dict[str, str]):
    kind = items.get("kind", "geometric")
    if kind not in _PRIOR_KEYS:
        raise ConfigError(f"[prior] kind must be one of {sorted(_PRIOR_KEYS)}")
    _check_keys("prior", items, _PRIOR_KEYS[kind])
    if kind == "geometric":
        return GeometricPrior(
            omega0=float(items.get("omega0", "0.0")), rho=float(items["rho"])
        )
    tail = items.get("tail_ratio", "none").strip().lower()
    tail_ratio = None if tail in ("none", "truncate") else float(tail)
    return TabulatedPrior(weights=_floats(items["weights"]), tail_ratio=tail_ratio)


def load_config(path) -> ExperimentConfig:
    """Parse and validate a configuration file into an ExperimentConfig."""
    parser = configparser.ConfigParser(
        delimiters=("=",), inline_comment_prefixes=("#",), strict=True
    )
    parser.optionxform = str
    read = parser.read(path)
    if not read:
        raise ConfigError(f"could not read configuration file {path!r}")

    sections = set(parser.sections())
    unknown = sections - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    missing = {"model.pre", "model.post", "prior", "detector"} - sections
    if missing:
        raise ConfigError(f"missing section(s): {', '.join(sorted(missing))}")

    pre = _build_spec("model.pre", dict(parser["model.pre"]))
    post = _build_spec("model.post", dict(parser["model.post"]))
    pair = RegimePair(pre=pre, post=post)
    prior = _build_prior(dict(parser["prior"]))

    det = dict(parser["detector"])
    _check_keys("detector", det, _DETECTOR_KEYS)
    detector_kind = det.get("kind", "shiryaev")
    thresholds: tuple[float, ...] = ()
    target_alpha = None
    if "thresholds" in det:
        thresholds = tuple(float(x) for x in _floats(det["thresholds"]))
    if "target_alpha" in det:
        target_alpha = float(det["target_alpha"])
    head_start = float(det.get("head_start", "0.0"))

    run = dict(parser["run"]) if parser.has_section("run") else {}
    _check_keys("run", run, _RUN_KEYS)
    delta_raw = run.get("delta_correction", "off").strip().lower()
    if delta_raw not in ("on", "off", "true", "false"):
        raise ConfigError("delta_correction must be on or off")

    try:
        return ExperimentConfig(
            pair=pair,
            prior=prior,
            detector_kind=detector_kind,
            thresholds=thresholds,
            target_alpha=target_alpha,
            head_start=head_start,
            reps=int(run.get("reps", "10000")),
            horizon=int(run.get("horizon", "300")),
            seed=int(run.get("seed", "1")),
            llr_mode=run.get("llr_mode", "exact"),
            delta_correction=delta_raw in ("on", "true"),
            threads=int(run.get("threads", "1")),
            moments=int(run.get("moments", "2")),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid run parameter: {exc}") from exc


def config_to_text(config: ExperimentConfig) -> str:
    """Render a configuration back to the file format (used by the example
    subcommand to show reproducible settings)."""
    def fmt(values) -> str:
        return " ".join(repr(float(v)) for v in values)

    def spec_block(name: str, spec: HmmSpec) -> list[str]:
        em = spec.emission
        lines = [
            f"[{name}]",
            f"states = {spec.num_states}",
            f"emission = {em.kind}",
            "transition = " + " ; ".join(fmt(row) for row in spec.transition),
        ]
        if isinstance(em, GaussianEmission):
            lines.append("means = " + fmt(em.means))
            lines.append("stds = " + fmt(em.stds))
        elif isinstance(em, BernoulliEmission):
            lines.append("probs = " + fmt(em.probs))
        else:
            lines.append("coeffs = " + fmt(em.coeffs))
        return lines

    lines = spec_block("model.pre", config.pair.pre) + [""]
    lines += spec_block("model.post", config.pair.post) + [""]
    prior = config.prior
    if isinstance(prior, GeometricPrior):
        lines += ["[prior]", "kind = geometric", f"omega0 = {prior.omega0!r}", f"rho = {prior.rho!r}", ""]
    else:
        tail = "none" if prior.tail_ratio is None else repr(float(prior.tail_ratio))
        lines += [
            "[prior]",
            "kind = tabulated",
            "weights = " + fmt(prior.weights),
            f"tail_ratio = {tail}",
            "",
        ]
    lines += ["[detector]", f"kind = {config.detector_kind}"]
    if config.thresholds:
        lines.append("thresholds = " + fmt(config.thresholds))
    if config.target_alpha is not None:
        lines.append(f"target_alpha = {config.target_alpha!r}")
    if config.detector_kind == "gsr":
        lines.append(f"head_start = {config.head_start!r}")
    lines += [
        "",
        "[run]",
        f"reps = {config.reps}",
        f"horizon = {config.horizon}",
        f"seed = {config.seed}",
        f"threads = {config.threads}",
        f"llr_mode = {config.llr_mode}",
        f"delta_correction = {'on' if config.delta_correction else 'off'}",
        f"moments = {config.moments}",
    ]
    return "\n".join(lines) + "\n"
