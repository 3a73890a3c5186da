"""Config-driven experiment harness: presets, runner, CSV output and plots."""

from .config import ExperimentConfig, resolve
from .io import compare, read_trajectory_csv
from .runner import RunManifest, run

__all__ = ["ExperimentConfig", "RunManifest", "compare", "read_trajectory_csv", "resolve", "run"]
