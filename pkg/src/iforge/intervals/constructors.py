"""Interval constructors that work from collected member or pass predictions.

All take member predictions shaped ``(T,)`` (one test point) or ``(T, n)``.
Noise variances are passed as variances, not standard deviations.
"""

from __future__ import annotations

import numpy as np

from .core import (
    PredictionInterval,
    aleatoric_variance,
    ensemble_mean_interval,
    member_matrix,
    member_mean,
    member_spread,
    normal_interval,
)


def boot_percentile_interval(member_preds, alpha: float) -> PredictionInterval:
    """Empirical ``alpha/2`` and ``1 - alpha/2`` quantiles of the member predictions.

    Quantiles interpolate linearly between order statistics at position
    ``1 + (T - 1) q``.
    """
    scalar = np.ndim(member_preds) == 1
    P = member_matrix(member_preds)
    if P.shape[0] < 2:
        raise ValueError("need at least two members")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    lo, hi = np.quantile(P, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0, method="linear")
    center = member_mean(P)
    spread = member_spread(P)

    def pick(a):
        return float(a[0]) if scalar else a

    return PredictionInterval(pick(center), pick(lo), pick(hi), alpha, "boot_percentile",
                              epistemic_var=pick(spread), aleatoric_var=0.0)


def _point_pred(point_pred):
    return np.atleast_1d(np.asarray(point_pred, dtype=float))


def boot_normal_interval(point_pred, member_preds, aleatoric_var: float, alpha: float) -> PredictionInterval:
    """Original-sample prediction +/- z * sqrt(member spread + noise variance)."""
    scalar = np.ndim(member_preds) == 1
    P = member_matrix(member_preds)
    center = _point_pred(point_pred)
    return normal_interval(center, member_spread(P), aleatoric_var, alpha, "boot_normal", scalar=scalar)


def boot_bias_corrected_interval(point_pred, member_preds, aleatoric_var: float,
                                 alpha: float) -> PredictionInterval:
    """As :func:`boot_normal_interval`, centered at ``2 * point_pred - member mean``."""
    scalar = np.ndim(member_preds) == 1
    P = member_matrix(member_preds)
    f = _point_pred(point_pred)
    center = 2.0 * f - member_mean(P)
    return normal_interval(center, member_spread(P), aleatoric_var, alpha, "boot_bias_corrected",
                           scalar=scalar)


def boot_mean_interval(member_preds, aleatoric_var: float, alpha: float) -> PredictionInterval:
    """Bootstrap average +/- z * sqrt(spread / T + noise variance).

    ``aleatoric_var`` should come from residuals of the bootstrap average.
    """
    return ensemble_mean_interval(member_preds, aleatoric_var, alpha, "boot_mean")


def mc_dropout_interval(samples, aleatoric_var: float, alpha: float) -> PredictionInterval:
    """MC-dropout mean +/- z * sqrt(noise variance + pass spread).

    The spread is not divided by ``T``: every pass shares the same weights.
    """
    scalar = np.ndim(samples) == 1
    P = member_matrix(samples)
    if P.shape[0] < 2:
        raise ValueError("need at least two passes")
    return normal_interval(member_mean(P), member_spread(P), aleatoric_var, alpha, "mc_dropout",
                           scalar=scalar, T=P.shape[0])


def extra_nn_interval(member_preds, targets, alpha: float) -> PredictionInterval:
    """Extra-neural-network interval over a test sample.

    The noise variance is the mean squared residual of the ensemble mean
    against ``targets`` (one target per column of ``member_preds``).
    """
    P = member_matrix(member_preds)
    sigma2 = aleatoric_variance(member_mean(P), targets)
    return ensemble_mean_interval(member_preds, sigma2, alpha, "extra_nn")
