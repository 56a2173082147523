"""Deterministic simulator for asynchronous federated learning across data centers."""

from .aggregation import decay_weight, global_aggregate, master_gen, planet_update
from .config import ConfigError, ExperimentConfig, build_config, parse_config
from .core import RngStream, ViolationError, as_params, weighted_mean
from .engine import MetricsLog, run

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "MetricsLog",
    "RngStream",
    "ViolationError",
    "as_params",
    "build_config",
    "decay_weight",
    "global_aggregate",
    "master_gen",
    "parse_config",
    "planet_update",
    "run",
    "weighted_mean",
]

__version__ = "0.1.0"
