"""Method-of-steps simulation and system models."""

from .dsl import model_from_dsl
from .integrator import (
    B_MAX_DEFAULT,
    BatchResult,
    SimConfig,
    Window,
    history_grid,
    sample_inputs,
    simulate,
    simulate_batch,
    trapezoid_window,
)
from .models import SystemModel, get_model, register_builtin_models

__all__ = [
    "B_MAX_DEFAULT",
    "BatchResult",
    "SimConfig",
    "SystemModel",
    "Window",
    "get_model",
    "history_grid",
    "model_from_dsl",
    "register_builtin_models",
    "sample_inputs",
    "simulate",
    "simulate_batch",
    "trapezoid_window",
]
