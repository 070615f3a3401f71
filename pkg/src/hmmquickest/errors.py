"""Exception hierarchy shared across the package.

Every error carries a short machine-readable ``category`` slug; the CLI
prints it on stderr and maps it to an exit code.
"""

from __future__ import annotations


class HmmQuickestError(Exception):
    """Base class for all package errors."""

    category = "error"


class ModelValidationError(HmmQuickestError):
    """A model object violates a structural requirement."""

    category = "model-validation"


class ZeroDensityError(HmmQuickestError):
    """An observation has zero density under a regime (0/0 likelihood ratio)."""

    category = "zero-density"

    def __init__(self, message: str, observation=None, index=None):
        super().__init__(message)
        self.observation = observation
        self.index = index


class ExhaustedPriorError(HmmQuickestError):
    """The change-point prior has no survival mass left at the requested time."""

    category = "exhausted-prior"


class TrivialSolutionError(HmmQuickestError):
    """The false-alarm constraint is satisfiable by stopping immediately."""

    category = "trivial-solution"


class CalibrationError(HmmQuickestError):
    """Threshold calibration ran out of budget before bracketing the target."""

    category = "calibration-failure"

    def __init__(self, message: str, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class EstimationError(HmmQuickestError):
    """A Monte Carlo estimator could not produce a usable estimate."""

    category = "estimation-failure"


class ConfigError(HmmQuickestError):
    """The experiment configuration file is malformed or inconsistent."""

    category = "config"


class DegenerateModelWarning(UserWarning):
    """Pre- and post-change regimes coincide; detection is degenerate."""


class LatticeWarning(UserWarning):
    """Log-likelihood ratio increments live on a lattice; higher-order
    approximations assume a nonarithmetic walk."""
