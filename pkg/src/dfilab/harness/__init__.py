"""Experiment orchestration: configs, checkpoints, reports, plots and sweeps."""

from .checkpoint import (
    CheckpointContainer,
    CheckpointError,
    gan_container,
    gan_from_container,
    inference_container,
    inference_from_container,
    scgan_container,
    scgan_from_container,
)
from .config import ConfigError, ExperimentConfig
from .pipeline import DependencyError, run, run_config, sweep
from .plot import emit_scatter_svg
from .report import ExperimentReport, MetricRow, read_report, write_report

__all__ = [
    "CheckpointContainer",
    "CheckpointError",
    "ConfigError",
    "DependencyError",
    "ExperimentConfig",
    "ExperimentReport",
    "MetricRow",
    "emit_scatter_svg",
    "gan_container",
    "gan_from_container",
    "inference_container",
    "inference_from_container",
    "read_report",
    "run",
    "run_config",
    "scgan_container",
    "scgan_from_container",
    "sweep",
    "write_report",
]
