"""Asynchronous grant-free random access: simulator, detectors, benchmark."""

from .airsim import (
    EffectivePilotSet,
    NoiseCovariance,
    ReceivedSamples,
    ScenarioConfig,
    ScenarioRealization,
    build_effective_pilots,
    build_noise_covariance,
    draw_correlated_noise,
    generate_scenario,
    synthesize_oracle,
    synthesize_samples,
    synthesize_samples_imperfect,
)
from .baselines import (
    StackedModel,
    build_stacked_model,
    run_bomp,
    run_ga_mmse,
    run_mp_bsbl_sync,
)
from .bench import (
    MetricRow,
    SweepSpec,
    aer,
    ce_mse,
    run_sweep,
    sinr_comparison,
    sinr_pair,
    write_csv,
)
from .detector import DetectionResult, DetectorConfig, MessageState, run_detector
from .errors import (
    ConfigError,
    ContractViolation,
    DomainError,
    GfraError,
    NumericalGuardError,
    SizeLimitError,
)
from .waveform import PulseShape, autocorrelation, mean_mui_factor, mui_factor

__version__ = "0.1.0"
