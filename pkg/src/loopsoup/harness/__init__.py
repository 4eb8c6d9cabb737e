"""Experiment suite: sampled soups against closed forms and independent routes."""

from . import experiments as _experiments  # noqa: F401  (registers the experiments)
from .core import (
    EXPERIMENTS,
    SHARD_SIZE,
    Z_MAX,
    ExperimentConfig,
    ExperimentReport,
    Row,
    run_experiment,
    run_suite,
)
from .experiments import isomorphism_exact
from .stats import RunningStats

__all__ = [
    "EXPERIMENTS",
    "SHARD_SIZE",
    "Z_MAX",
    "ExperimentConfig",
    "ExperimentReport",
    "Row",
    "RunningStats",
    "isomorphism_exact",
    "run_experiment",
    "run_suite",
]
