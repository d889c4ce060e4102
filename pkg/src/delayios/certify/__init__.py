"""Ensemble certification and falsification of stability estimates."""

from .checks import (
    FORMS,
    RAZ_FORMS,
    CertificationReport,
    Context,
    EstimateCandidate,
    ExponentialFit,
    build_context,
    check_estimate,
    check_razumikhin,
    derived_from_si,
    estimate_asymptotic_gain,
    fit_candidate,
    fit_exponential,
    lift_to_history_norm,
    razumikhin_soundness,
    value_and_bound,
)
from .ensemble import (
    EnsembleDraw,
    EnsembleSpec,
    default_threads,
    draw_ensemble,
    random_bang_bang,
    random_histories,
    run_batches,
    run_ensemble,
    steps_to_signal,
)

__all__ = [
    "FORMS",
    "RAZ_FORMS",
    "CertificationReport",
    "Context",
    "EnsembleDraw",
    "EnsembleSpec",
    "EstimateCandidate",
    "ExponentialFit",
    "build_context",
    "check_estimate",
    "check_razumikhin",
    "default_threads",
    "derived_from_si",
    "draw_ensemble",
    "estimate_asymptotic_gain",
    "fit_candidate",
    "fit_exponential",
    "lift_to_history_norm",
    "random_bang_bang",
    "random_histories",
    "razumikhin_soundness",
    "run_batches",
    "run_ensemble",
    "steps_to_signal",
    "value_and_bound",
]
