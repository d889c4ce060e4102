"""Comparison functions and the constructive lemmas built on them."""

from .core import (
    LOG_GRID,
    ComparisonFunction,
    KLFunction,
    function_from_json,
    identity,
    inverse_function,
    invert,
    isotonic_increasing,
    log_grid_check,
    pointwise_max,
    power_map,
    table_function,
)
from .lemmas import (
    DecayTimeFamily,
    FactorGrid,
    RFCEnvelope,
    SontagFactorization,
    build_rfc_envelope,
    decay_time_family,
    lagrange_convert,
    margin_exact,
    sontag_factorize,
    synthesize_margin,
)
from .registry import parse_function, parse_kl

__all__ = [
    "LOG_GRID",
    "ComparisonFunction",
    "KLFunction",
    "DecayTimeFamily",
    "FactorGrid",
    "RFCEnvelope",
    "SontagFactorization",
    "build_rfc_envelope",
    "decay_time_family",
    "function_from_json",
    "identity",
    "inverse_function",
    "invert",
    "isotonic_increasing",
    "lagrange_convert",
    "log_grid_check",
    "margin_exact",
    "parse_function",
    "parse_kl",
    "pointwise_max",
    "power_map",
    "sontag_factorize",
    "synthesize_margin",
    "table_function",
]
