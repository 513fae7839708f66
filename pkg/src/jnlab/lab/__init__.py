"""Corpus generators, experiment orchestration and the command line."""
from .corpus import DomainSpec, FunctionSpec, gen_domain, gen_function
from .experiments import ConfigError, ExperimentReport, run_experiment, validate_report

__all__ = [
    "ConfigError",
    "DomainSpec",
    "ExperimentReport",
    "FunctionSpec",
    "gen_domain",
    "gen_function",
    "run_experiment",
    "validate_report",
]
