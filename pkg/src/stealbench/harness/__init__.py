"""Experiment specs, orchestration and report files."""

from .reports import emit_reports, format_report, preflight, read_results
from .runner import (
    ExperimentResult,
    GridSearchResult,
    StageError,
    grid_search_defense,
    prepare_data,
    run_experiment,
    run_sweep,
    select_defense,
    strength_sweep,
    train_base,
)
from .spec import ExperimentSpec, derive_seed, load_spec, parse_spec

__all__ = [
    "ExperimentResult", "ExperimentSpec", "GridSearchResult", "StageError", "derive_seed",
    "emit_reports", "format_report", "grid_search_defense", "load_spec", "parse_spec",
    "preflight", "prepare_data", "read_results", "run_experiment", "run_sweep", "select_defense",
    "strength_sweep", "train_base",
]
