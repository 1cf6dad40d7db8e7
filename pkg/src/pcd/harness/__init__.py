"""Configuration, experiment drivers, reporting and the ``pcd`` command line."""

from .config import ExperimentConfig, dump_config, load_config, parse_config
from .experiments import (
    ConvergenceReport,
    DivergenceReport,
    ExperimentError,
    VerifyReport,
    run_convergence,
    run_divergence_demo,
    run_verify,
)
from .report import RunManifest, Table, write_outputs

__all__ = [
    "ConvergenceReport",
    "DivergenceReport",
    "ExperimentConfig",
    "ExperimentError",
    "RunManifest",
    "Table",
    "VerifyReport",
    "dump_config",
    "load_config",
    "parse_config",
    "run_convergence",
    "run_divergence_demo",
    "run_verify",
    "write_outputs",
]
