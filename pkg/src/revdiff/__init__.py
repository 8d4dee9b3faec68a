"""Reverse-diffusion sampling with self-normalized Monte Carlo score estimates."""

from ._validation import ConfigurationError
from .samplers import (
    RDMCSampler,
    ReverseDiffusionSampler,
    SampleRun,
    Schedule,
    ULASampler,
    reverse_step,
    run_rdmc,
    run_reverse_diffusion,
    run_ula,
    schedule_practical,
    schedule_theory,
)
from .scores import (
    EstimatorSpec,
    NoiseLevel,
    ScoreEstimator,
    auxiliary_ula_score,
    exact_oracle_score,
    self_normalized_score,
    tsi_gaussian_score,
)
from .targets import GaussianMixture, MixtureConstants, Potential, QueryBudgetExceeded

__version__ = "0.1.0"
