"""Statistical and machine-learning postprocessing of ensemble wind gust forecasts.

Submodules
----------
dataset       forecast cases, CSV I/O, splits and synthetic scenarios
distributions predictive distribution types and forecast combination
scoring       proper scoring rules and optimum score estimation
baselines     raw ensemble and climatological reference forecasts
emos, mbm, idr, gbm, qrf, nn
              postprocessing methods
verification  calibration diagnostics, DM/BH tests, permutation importance
pipeline, cli experiment orchestration
"""

from .dataset import CaseSet, DataSplit, ScenarioConfig, generate_scenario, load_csv, split_chronological, write_csv
from .exceptions import ConfigError, DataError, DomainError, GustppError, ModelKeyError, OptimizationError
from .scoring import EVAL_LEVELS, NOMINAL_COVERAGE, crps, logscore

__version__ = "0.1.0"

__all__ = [
    "CaseSet",
    "DataSplit",
    "ScenarioConfig",
    "generate_scenario",
    "load_csv",
    "split_chronological",
    "write_csv",
    "ConfigError",
    "DataError",
    "DomainError",
    "GustppError",
    "ModelKeyError",
    "OptimizationError",
    "EVAL_LEVELS",
    "NOMINAL_COVERAGE",
    "crps",
    "logscore",
]
