"""Configs, CLI, evaluation tournaments and metrics."""

from .config import ExperimentConfig, build_policies, config_hash, load_config
from .metrics import EpisodeMetrics, MetricRecord, TournamentResult, compute_metrics, metric_records
from .runner import export_plotdata, run_eval, run_train, run_tournament

__all__ = [
    "EpisodeMetrics",
    "ExperimentConfig",
    "MetricRecord",
    "TournamentResult",
    "build_policies",
    "compute_metrics",
    "config_hash",
    "export_plotdata",
    "load_config",
    "metric_records",
    "run_eval",
    "run_tournament",
    "run_train",
]
