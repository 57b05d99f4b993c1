from .checks import Report, check_run
from .config import ConfigError, ExperimentConfig, WorkloadSpec, load_config, parse_fail, with_overrides
from .matrix import CSV_COLUMNS, Outcome, ch_rec, commit_grid, recovery_grid, run_experiment, to_csv
from .oracle import OracleResult, oracle_replay, surviving_commits
from .traffic import generate_traffic

__all__ = [
    "CSV_COLUMNS",
    "ConfigError",
    "ExperimentConfig",
    "OracleResult",
    "Outcome",
    "Report",
    "WorkloadSpec",
    "ch_rec",
    "check_run",
    "commit_grid",
    "generate_traffic",
    "load_config",
    "oracle_replay",
    "parse_fail",
    "recovery_grid",
    "run_experiment",
    "surviving_commits",
    "to_csv",
    "with_overrides",
]
