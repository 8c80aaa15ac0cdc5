from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

METHODS = (
    "delta",
    "boot_percentile",
    "boot_normal",
    "boot_bias_corrected",
    "boot_mean",
    "mc_dropout",
    "extra_nn",
)

_STD_NORMAL = NormalDist()


def z_value(alpha: float) -> float:
    """Two-sided standard-normal critical value ``z_{1-alpha/2}``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return _STD_NORMAL.inv_cdf(1.0 - alpha / 2.0)


@dataclass(frozen=True)
class PredictionInterval:
    """Interval(s) for one or many test points.

    Array-valued fields hold one entry per test point; ``aleatoric_var`` is
    pooled across the test sample and therefore usually scalar.
    """

    center: np.ndarray | float
    lower: np.ndarray | float
    upper: np.ndarray | float
    alpha: float
    method: str
    epistemic_var: np.ndarray | float = 0.0
    aleatoric_var: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def half_width(self):
        return (np.asarray(self.upper) - np.asarray(self.lower)) / 2.0

    @property
    def width(self):
        return np.asarray(self.upper) - np.asarray(self.lower)

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return (np.asarray(self.lower) <= y) & (y <= np.asarray(self.upper))


def member_matrix(member_preds) -> np.ndarray:
    """Member predictions as a ``(T, n)`` array (a length-T vector is one test point)."""
    P = np.asarray(member_preds, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2 or P.shape[0] < 1:
        raise ValueError(f"member predictions must be (T,) or (T, n), got shape {P.shape}")
    return P


def _squeeze(a, like_vector: bool):
    return float(a[0]) if like_vector else a


def member_mean(P: np.ndarray) -> np.ndarray:
    # Shifting by the first member keeps the mean exact when all members agree.
    return P[0] + (P - P[0]).mean(axis=0)


def member_spread(P: np.ndarray) -> np.ndarray:
    """Population variance across members, exactly zero when they all agree."""
    D = P - P[0]
    return ((D - D.mean(axis=0)) ** 2).mean(axis=0)


def aleatoric_variance(predictions, targets) -> float:
    """Mean squared residual, the homoscedastic noise-variance estimate."""
    pred = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if pred.size == 0:
        raise ValueError("empty input")
    if pred.shape != y.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {y.size} targets")
    return float(np.mean((y - pred) ** 2))


def normal_interval(center, epistemic_var, aleatoric_var: float, alpha: float, method: str,
                    scalar: bool = False, **meta) -> PredictionInterval:
    """``center +/- z * sqrt(epistemic_var + aleatoric_var)``."""
    center = np.asarray(center, dtype=float)
    epistemic_var = np.asarray(epistemic_var, dtype=float)
    if aleatoric_var < 0 or np.any(epistemic_var < 0):
        raise ValueError("variances must be non-negative")
    half = z_value(alpha) * np.sqrt(epistemic_var + aleatoric_var)
    lower, upper = center - half, center + half
    return PredictionInterval(
        center=_squeeze(np.atleast_1d(center), scalar),
        lower=_squeeze(np.atleast_1d(lower), scalar),
        upper=_squeeze(np.atleast_1d(upper), scalar),
        alpha=alpha,
        method=method,
        epistemic_var=_squeeze(np.atleast_1d(epistemic_var), scalar),
        aleatoric_var=float(aleatoric_var),
        meta=meta,
    )


def ensemble_mean_interval(member_preds, aleatoric_var: float, alpha: float, method: str) -> PredictionInterval:
    """Interval around the ensemble mean with the member spread shrunk by ``1/T``.

    Shared by the averaged bootstrap interval and the extra-neural-network
    interval; both treat member predictions as uncorrelated.
    """
    scalar = np.ndim(member_preds) == 1
    P = member_matrix(member_preds)
    T = P.shape[0]
    return normal_interval(member_mean(P), member_spread(P) / T, aleatoric_var, alpha, method,
                           scalar=scalar, T=T)
