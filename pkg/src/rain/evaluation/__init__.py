"""Metrics and report emission."""

from .metrics import (
    RelationReport,
    min_ade_fde,
    miss_rate,
    mse_curve,
    relation_metrics,
    summarize_runs,
)

__all__ = [
    "RelationReport",
    "min_ade_fde",
    "miss_rate",
    "mse_curve",
    "relation_metrics",
    "summarize_runs",
]
