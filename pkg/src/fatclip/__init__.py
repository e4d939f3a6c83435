"""Federated averaging with clipping under fat-tailed gradient noise."""

from .clipping import ClipReport, clip
from .core import RngStream, as_vector, vec_norm
from .engine import FLConfig, ObjectiveSpec, RoundRecord, Trajectory, run_experiment, run_round
from .metrics import FailurePolicy, detect_failure, fit_rate_exponent, success_rate
from .noise import NoiseSpec, estimate_tail_index, sample_noise_vector
from .schedules import SchedulePlan, plan, rate_exponent

__all__ = [
    "ClipReport",
    "FLConfig",
    "FailurePolicy",
    "NoiseSpec",
    "ObjectiveSpec",
    "RngStream",
    "RoundRecord",
    "SchedulePlan",
    "Trajectory",
    "as_vector",
    "clip",
    "detect_failure",
    "estimate_tail_index",
    "fit_rate_exponent",
    "plan",
    "rate_exponent",
    "run_experiment",
    "run_round",
    "sample_noise_vector",
    "success_rate",
    "vec_norm",
]
