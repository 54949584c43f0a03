"""Metrics, fold plans, baselines and the cross-validation harness."""
from .baselines import BASELINES, DegenerateTrainError, baseline_fit_predict, fit_logistic, fit_tree, predict_tree
from .folds import FoldPlan, make_folds
from .harness import (ExperimentResult, StageError, aggregate, prepare, report_json, report_table,
                      run_experiment, run_fold)
from .metrics import AucUndefinedError, ConfusionCounts, MetricsReport, auc, confusion, metrics

__all__ = [
    "BASELINES", "DegenerateTrainError", "baseline_fit_predict", "fit_logistic", "fit_tree", "predict_tree",
    "FoldPlan", "make_folds",
    "ExperimentResult", "StageError", "aggregate", "prepare", "report_json", "report_table",
    "run_experiment", "run_fold",
    "AucUndefinedError", "ConfusionCounts", "MetricsReport", "auc", "confusion", "metrics",
]
