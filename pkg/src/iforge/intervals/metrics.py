from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import PredictionInterval, member_matrix

DEFAULT_ALPHAS = (0.01, 0.05, 0.10)


@dataclass(frozen=True)
class CoverageReport:
    miss_rates: dict[float, float]
    mape: float
    mspe: float
    rmspe: float
    n_test: int

    def to_dict(self) -> dict:
        return {
            "miss_rates": {repr(float(a)): r for a, r in sorted(self.miss_rates.items())},
            "mape": self.mape,
            "mspe": self.mspe,
            "rmspe": self.rmspe,
            "n_test": self.n_test,
        }


def miss_rate(interval: PredictionInterval, targets) -> float:
    y = np.asarray(targets, dtype=float).ravel()
    lower = np.broadcast_to(np.asarray(interval.lower, dtype=float), y.shape)
    upper = np.broadcast_to(np.asarray(interval.upper, dtype=float), y.shape)
    return float(np.mean((y < lower) | (y > upper)))


def coverage_report(intervals: Mapping[float, PredictionInterval], targets, predictions) -> CoverageReport:
    """Empirical miss rate per significance level plus point-prediction errors."""
    y = np.asarray(targets, dtype=float).ravel()
    pred = np.asarray(predictions, dtype=float).ravel()
    if y.shape != pred.shape:
        raise ValueError(f"length mismatch: {y.size} targets, {pred.size} predictions")
    if y.size == 0:
        raise ValueError("empty test set")
    rates = {}
    for alpha, pi in intervals.items():
        if np.ndim(pi.lower) and np.size(pi.lower) != y.size:
            raise ValueError(f"interval at alpha={alpha} has {np.size(pi.lower)} points, expected {y.size}")
        rates[float(alpha)] = miss_rate(pi, y)
    resid = y - pred
    mspe = float(np.mean(resid**2))
    return CoverageReport(rates, float(np.mean(np.abs(resid))), mspe, math.sqrt(mspe), int(y.size))


@dataclass(frozen=True)
class MSPEDecomposition:
    """Ensemble MSPE split into squared bias, member variance and member covariance.

    Moments are taken over test points of the member deviations from the
    reference, so ``mspe == bias_sq + variance_term + covariance_term`` holds
    exactly (up to rounding).
    """

    bias_sq: float
    variance: float
    covariance: float
    T: int

    @property
    def variance_term(self) -> float:
        return self.variance / self.T

    @property
    def covariance_term(self) -> float:
        return (self.T - 1) / self.T * self.covariance

    @property
    def mspe(self) -> float:
        return self.bias_sq + self.variance_term + self.covariance_term


def mspe_decomposition(member_preds, targets, true_fn_values=None) -> MSPEDecomposition:
    """Decompose the ensemble-mean error against ``true_fn_values`` (or ``targets``)."""
    P = member_matrix(member_preds)
    ref = np.asarray(true_fn_values if true_fn_values is not None else targets, dtype=float).ravel()
    if ref.size != P.shape[1]:
        raise ValueError(f"{P.shape[1]} prediction columns but {ref.size} reference values")
    T = P.shape[0]
    D = P - ref
    mu = D.mean()
    C = np.cov(D, bias=True) if T > 1 else np.atleast_2d(D.var())
    C = np.atleast_2d(C)
    variance = float(np.trace(C) / T)
    covariance = float((C.sum() - np.trace(C)) / (T * (T - 1))) if T > 1 else 0.0
    return MSPEDecomposition(float(mu**2), variance, covariance, T)
