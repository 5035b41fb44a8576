"""Scenario presets, comparison metrics and the command-line front end."""
from .compare import ComparisonReport, boundary_layer_width, boundary_layer_widths, compare_fields
from .config import ExperimentConfig, default_config, load_config, parse_config
from .scenarios import run_scenario

__all__ = [
    "ComparisonReport",
    "ExperimentConfig",
    "boundary_layer_width",
    "boundary_layer_widths",
    "compare_fields",
    "default_config",
    "load_config",
    "parse_config",
    "run_scenario",
]
