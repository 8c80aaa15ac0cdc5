"""Prediction-interval constructors for ReLU networks."""

from .constructors import (
    boot_bias_corrected_interval,
    boot_mean_interval,
    boot_normal_interval,
    boot_percentile_interval,
    extra_nn_interval,
    mc_dropout_interval,
)
from .core import (
    METHODS,
    PredictionInterval,
    aleatoric_variance,
    ensemble_mean_interval,
    member_mean,
    member_spread,
    normal_interval,
    z_value,
)
from .delta import DegenerateJacobianError, delta_interval, delta_leverage, factor_gram
from .ensembles import (
    Ensemble,
    Member,
    bootstrap_fit,
    bootstrap_rows,
    ensemble_predict,
    extra_nn_fit,
    mc_dropout_predict,
    member_predictions,
    train_dropout_network,
)
from .metrics import (
    DEFAULT_ALPHAS,
    CoverageReport,
    MSPEDecomposition,
    coverage_report,
    miss_rate,
    mspe_decomposition,
)

__all__ = [
    "METHODS", "DEFAULT_ALPHAS", "PredictionInterval", "Ensemble", "Member", "CoverageReport",
    "MSPEDecomposition", "DegenerateJacobianError", "z_value", "aleatoric_variance",
    "normal_interval", "ensemble_mean_interval", "member_mean", "member_spread",
    "delta_interval", "delta_leverage", "factor_gram", "bootstrap_fit", "bootstrap_rows",
    "extra_nn_fit", "train_dropout_network", "ensemble_predict", "member_predictions",
    "mc_dropout_predict", "boot_percentile_interval", "boot_normal_interval",
    "boot_bias_corrected_interval", "boot_mean_interval", "mc_dropout_interval",
    "extra_nn_interval", "coverage_report", "miss_rate", "mspe_decomposition",
]
