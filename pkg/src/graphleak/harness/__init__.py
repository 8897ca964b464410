"""Config-driven experiment pipeline, reporting and command-line interface."""

from .config import ExperimentConfig, load_config
from .pipeline import AccessLog, Runner, StageError, load_tables
from .report import report

__all__ = ["AccessLog", "ExperimentConfig", "Runner", "StageError", "load_config", "load_tables", "report"]
