from .metrics import MethodMetrics, estimate_metrics, replication_metrics
from .scenarios import (
    GroundTruth,
    sample_covariates,
    sample_responses,
    scenario_library,
    scenario_names,
)
from .study import MethodSpec, MetricsReport, ScenarioSpec, run_study

__all__ = [
    "GroundTruth",
    "MethodMetrics",
    "MethodSpec",
    "MetricsReport",
    "ScenarioSpec",
    "estimate_metrics",
    "replication_metrics",
    "run_study",
    "sample_covariates",
    "sample_responses",
    "scenario_library",
    "scenario_names",
]
