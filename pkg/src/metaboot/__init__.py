"""Parametric bootstrap heterogeneity tests for random- and mixed-effects meta-analysis."""

__version__ = "0.1.0"

from .bootstrap import BootstrapConfig, BootstrapOutcome, StatKind, bootstrap_test, bootstrap_tests
from .classical import TestResult, lr_test, q_test
from .effect_sizes import (EffectKind, StudyEffect, fisher_z, log_odds_ratio, smd_from_estimate,
                           smd_from_summary)
from .errors import MetaBootError
from .ingest import export_csv, ingest_csv
from .model import MetaDataset, Method, ModelFit, fit, heterogeneity_indexes, q_statistic
from .simulation import SimulationConfig, SimulationResult, generate_dataset, run_rejection_study

__all__ = [
    "BootstrapConfig", "BootstrapOutcome", "StatKind", "bootstrap_test", "bootstrap_tests",
    "TestResult", "lr_test", "q_test",
    "EffectKind", "StudyEffect", "fisher_z", "log_odds_ratio", "smd_from_estimate", "smd_from_summary",
    "MetaBootError", "export_csv", "ingest_csv",
    "MetaDataset", "Method", "ModelFit", "fit", "heterogeneity_indexes", "q_statistic",
    "SimulationConfig", "SimulationResult", "generate_dataset", "run_rejection_study",
]
