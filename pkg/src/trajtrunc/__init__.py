"""Analytic trajectory truncation for variance-preserving Gaussian noising."""

from .errors import ContractError, DataError, ParameterError, StageError, StepRangeError, TrajTruncError
from .gaussianity import cumulants, gaussianity_curve, ks_statistic, mutual_information
from .harness import Family, SyntheticSpec, generate, run_pipeline
from .sampler import (
    GmmDenoiser,
    GmmSpec,
    LinearDenoiser,
    ZeroDenoiser,
    ancestral_sample,
    compare_full_vs_truncated,
    denoise,
    fit_linear_denoiser,
    posterior_params,
)
from .schedule import NoiseSchedule, forward_marginal, forward_step, make_cosine_schedule, make_linear_schedule
from .stats import Dataset, Modality, center, compute_stats, propagate_variance
from .truncation import TruncationDecision, select_t_star, truncated_prior

__version__ = "0.1.0"
