"""Experiment configuration, orchestration, file formats and the CLI."""
from .config import ConfigError, ExperimentConfig, load, presets, validate
from .experiments import generate_reference, run_experiment, sweep_mn, sweep_step_size
from .io import RunRecord

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunRecord",
    "generate_reference",
    "load",
    "presets",
    "run_experiment",
    "sweep_mn",
    "sweep_step_size",
    "validate",
]
