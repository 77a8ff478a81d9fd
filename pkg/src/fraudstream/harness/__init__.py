"""Simulation loop, label bookkeeping, experiment runner and configuration."""

from .config import ExperimentConfig, dump_config, load_config, parse_config
from .experiment import ExperimentResult, SweepResult, m_sweep, run_experiment
from .ledger import LabelLedger, Oracle, oracle_label
from .simulation import DayState, Simulation, init_training_set, run_day, seed_for

__all__ = [
    "DayState", "ExperimentConfig", "ExperimentResult", "LabelLedger", "Oracle", "Simulation",
    "SweepResult", "dump_config", "init_training_set", "load_config", "m_sweep", "oracle_label",
    "parse_config", "run_day", "run_experiment", "seed_for",
]
