"""Bayesian quickest change-point detection for finite-state hidden Markov
models: posterior-odds and generalized Shiryaev-Roberts stopping rules over
log-domain matrix filters, Monte Carlo operating characteristics, and
higher-order delay and false-alarm approximations."""

from .asymptotics import (
    AddPrediction,
    EtaConstant,
    OvershootConstants,
    PoissonCorrection,
    estimate_eta_constant,
    estimate_overshoot,
    estimate_poisson_correction,
    first_order_add,
    ho_add,
    ho_pfa,
)
from .detectors import (
    CalibrationResult,
    DetectionOutcome,
    GsrDetector,
    ShiryaevDetector,
    calibrate_threshold,
    gsr_threshold,
    run_detector,
    shiryaev_threshold,
)
from .errors import (
    CalibrationError,
    ConfigError,
    DegenerateModelWarning,
    EstimationError,
    ExhaustedPriorError,
    HmmQuickestError,
    LatticeWarning,
    ModelValidationError,
    TrivialSolutionError,
    ZeroDensityError,
)
from .experiments import (
    ExampleResult,
    ExperimentConfig,
    OperatingCharacteristic,
    OracleResult,
    SllnDiagnostic,
    ThresholdRow,
    emit_report,
    estimate_add,
    estimate_conditional_add,
    estimate_pfa,
    exact_oracle,
    example_config,
    example_pair,
    run_example,
    simulate_grid,
    slln_diagnostic,
    two_state_gaussian_loglr,
)
from .hmm import (
    Ar1GaussianEmission,
    BernoulliEmission,
    GaussianEmission,
    HmmSpec,
    RegimePair,
    SamplePath,
    kl_information,
    sample_path,
    stationary_distribution,
)
from .likelihood import (
    FilterState,
    LlrStream,
    MatrixStep,
    brute_force_likelihood,
    filter_advance,
    filter_init,
    filter_update,
    llr_increment,
    llr_segment,
    matrix_step,
    stream_llr,
)
from .mc import McEstimate
from .priors import (
    GeometricPrior,
    TabulatedPrior,
    prior_eval,
    prior_mean,
    tail_exponent,
    weight_kn,
)

__version__ = "0.1.0"
