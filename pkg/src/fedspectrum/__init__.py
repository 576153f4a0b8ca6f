"""Deterministic federated-learning spectrum sensing simulator.

Submodules: spectrum_env (traffic / channel / energy generators),
learner (the per-RB CNN classifier and energy-threshold baseline),
federation (the FL loop), attacks, defense, harness (configs, scenarios,
metrics emission), cli.
"""

from .errors import (
    AggregationError,
    ConfigError,
    FedSpectrumError,
    FormatError,
    InputError,
    NumericError,
    ParameterError,
    ShapeError,
)

__all__ = [
    "AggregationError",
    "ConfigError",
    "FedSpectrumError",
    "FormatError",
    "InputError",
    "NumericError",
    "ParameterError",
    "ShapeError",
]

__version__ = "0.1.0"
