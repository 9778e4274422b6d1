"""Automatic debiased machine learning.

Learners for regression/Riesz-representer pairs (a multitask neural
network and an honest forest), debiased estimators of average linear
moment functionals with cross-fitting, and replication harnesses.
"""

__version__ = "0.1.0"

from .dataset import Dataset, FoldAssignment, load_csv, make_folds
from .errors import (ArgumentError, AutodmlError, ConfigError, DataError,
                     DegenerateLeafError, EmptyTreeError, IncompatibilityError,
                     IngestionError, NumericError, SchemaError, ShapeError,
                     TrainingError, ValidationError)
from .estimators import (Estimate, LearnerFactories, crossfit_estimate,
                         direct_estimate, dr_estimate, estimate_from_psi,
                         ips_estimate, normal_quantile, post_tmle_estimate,
                         tmle_epsilon)
from .experiments import (DgpSpec, MetricsRow, ReplicationReport,
                          gen_bhp_design, gen_binary_synthetic,
                          gen_continuous_synthetic, make_learner_factories,
                          run_replications, true_theta_oracle)
from .forestriesz import (FeatureMap, RieszForest, RieszForestConfig,
                          fit_forest, fit_regression_forest)
from .moments import (MomentFunctional, PluginBinaryRR, PluginSteinRR,
                      empirical_riesz_loss, make_moment)
from .riesznet import FittedRieszNet, RieszNetConfig, StageConfig, train

__all__ = [
    "__version__",
    "Dataset", "FoldAssignment", "load_csv", "make_folds",
    "AutodmlError", "ConfigError", "ArgumentError", "DataError",
    "SchemaError", "IngestionError", "ValidationError", "ShapeError",
    "NumericError", "TrainingError", "DegenerateLeafError",
    "EmptyTreeError", "IncompatibilityError",
    "Estimate", "LearnerFactories", "crossfit_estimate", "direct_estimate",
    "dr_estimate", "estimate_from_psi", "ips_estimate", "normal_quantile",
    "post_tmle_estimate", "tmle_epsilon",
    "DgpSpec", "MetricsRow", "ReplicationReport", "gen_bhp_design",
    "gen_binary_synthetic", "gen_continuous_synthetic",
    "make_learner_factories", "run_replications", "true_theta_oracle",
    "FeatureMap", "RieszForest", "RieszForestConfig", "fit_forest",
    "fit_regression_forest",
    "MomentFunctional", "PluginBinaryRR", "PluginSteinRR",
    "empirical_riesz_loss", "make_moment",
    "FittedRieszNet", "RieszNetConfig", "StageConfig", "train",
]
