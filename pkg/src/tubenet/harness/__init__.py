"""Experiment runner: scenario configs, comparison studies, CSV/JSON artifacts."""

from tubenet.harness.config import ExperimentConfig, load_config
from tubenet.harness.experiments import (
    run_bifurcation,
    run_cells,
    run_convergence,
    run_straight_channel,
)

__all__ = [
    "ExperimentConfig",
    "load_config",
    "run_bifurcation",
    "run_cells",
    "run_convergence",
    "run_straight_channel",
]
