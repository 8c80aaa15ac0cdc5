from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..network import Parameters, forward, jacobian
from .core import PredictionInterval, aleatoric_variance, normal_interval

RIDGE_SCALE = 1e-8
# Cholesky pivots this small relative to the largest mean the Gram matrix is
# singular in exact arithmetic (ReLU rescaling symmetries guarantee this).
_PIVOT_RCOND = 1e-12


class DegenerateJacobianError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class GramFactor:
    """Cholesky factor of ``J^T J`` (plus ridge, if one was needed)."""

    L: np.ndarray
    ridge: float

    def leverage(self, grads: np.ndarray) -> np.ndarray:
        """``g^T (J^T J)^{-1} g`` for each row ``g`` of ``grads``."""
        Z = np.linalg.solve(self.L, np.atleast_2d(grads).T)
        return (Z**2).sum(axis=0)


def _try_cholesky(G: np.ndarray) -> np.ndarray | None:
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        return None
    piv = np.diag(L) ** 2
    if not np.isfinite(piv).all() or piv.min() <= _PIVOT_RCOND * piv.max():
        return None
    return L


def factor_gram(J: np.ndarray) -> GramFactor:
    """Factor ``J^T J``; fall back to a ridge of ``1e-8 * trace / r`` when singular."""
    G = J.T @ J
    L = _try_cholesky(G)
    if L is not None:
        return GramFactor(L, 0.0)
    r = G.shape[0]
    ridge = RIDGE_SCALE * np.trace(G) / r
    if not ridge > 0:
        raise DegenerateJacobianError("degenerate Jacobian: J^T J has zero trace")
    L = _try_cholesky(G + ridge * np.eye(r))
    if L is None:
        raise DegenerateJacobianError("degenerate Jacobian: J^T J singular even after ridge")
    return GramFactor(L, float(ridge))


def delta_leverage(params: Parameters, X_train, x) -> tuple[np.ndarray, float]:
    """``S(x) = f'(x)^T (J^T J)^{-1} f'(x)`` and the ridge used."""
    gram = factor_gram(jacobian(params, np.atleast_2d(X_train)))
    return gram.leverage(jacobian(params, np.atleast_2d(x))), gram.ridge


def delta_interval(params: Parameters, X_train, y_train, x, alpha: float,
                   aleatoric_var: float | None = None) -> PredictionInterval:
    """Asymptotic interval ``f(x) +/- z * sigma_e * sqrt(1 + S(x))``.

    ``sigma_e^2`` defaults to the mean squared training residual.
    """
    scalar = np.ndim(x) == 1
    X_train = np.atleast_2d(np.asarray(X_train, dtype=float))
    if aleatoric_var is None:
        aleatoric_var = aleatoric_variance(forward(params, X_train)[0], y_train)
    S, ridge = delta_leverage(params, X_train, x)
    center = np.atleast_1d(forward(params, np.atleast_2d(x))[0])
    return normal_interval(center, aleatoric_var * S, aleatoric_var, alpha, "delta",
                           scalar=scalar, ridge=ridge, leverage=S)
