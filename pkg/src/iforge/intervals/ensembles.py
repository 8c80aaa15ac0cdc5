"""Fitting and evaluating the bootstrap and extra-neural-network ensembles, and MC dropout sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import member_mean
from ..masks import Mask, MaskMode, sample_mask
from ..network import (
    NetworkSpec,
    Parameters,
    TrainConfig,
    derive_seeds,
    predict,
    train_members,
)


@dataclass(frozen=True)
class Member:
    params: Parameters
    seed: int
    rows: np.ndarray
    mask: Mask | None = None


@dataclass(frozen=True)
class Ensemble:
    spec: NetworkSpec
    members: tuple[Member, ...]
    method: str

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("an ensemble needs at least two members")
        object.__setattr__(self, "members", tuple(self.members))

    @property
    def T(self) -> int:
        return len(self.members)

    @property
    def seeds(self) -> list[int]:
        return [m.seed for m in self.members]


def _member_seeds(config: TrainConfig, T: int, member_seeds: Sequence[int] | None) -> list[int]:
    if T < 2:
        raise ValueError("T must be at least 2")
    if member_seeds is None:
        return derive_seeds(config.seed, T)
    if len(member_seeds) != T:
        raise ValueError(f"expected {T} member seeds, got {len(member_seeds)}")
    return [int(s) for s in member_seeds]


def bootstrap_rows(M: int, seed) -> np.ndarray:
    """Row indices of one size-``M`` resample drawn with replacement."""
    rng = np.random.default_rng([int(seed), 0xB007])
    return rng.integers(0, M, size=M)


def bootstrap_fit(X, y, T: int, spec: NetworkSpec, config: TrainConfig,
                  member_seeds: Sequence[int] | None = None) -> Ensemble:
    """Train ``T`` networks, each on its own resample of the training rows."""
    seeds = _member_seeds(config, T, member_seeds)
    M = np.asarray(y).size
    rows = [bootstrap_rows(M, s) for s in seeds]
    params = train_members(spec, X, y, seeds, config, rows=rows)
    members = tuple(Member(p, s, r) for p, s, r in zip(params, seeds, rows))
    return Ensemble(spec, members, "bootstrap")


def extra_nn_fit(X, y, T: int, p: float, spec: NetworkSpec, config: TrainConfig,
                 member_seeds: Sequence[int] | None = None) -> Ensemble:
    """Draw ``T`` structural masks up front, then train each thinned network on all rows."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    seeds = _member_seeds(config, T, member_seeds)
    masks = [sample_mask(spec, p, [s, 0x3A5C], MaskMode.FIXED_STRUCTURAL) for s in seeds]
    M = np.asarray(y).size
    rows = [np.arange(M)] * T
    params = train_members(spec, X, y, seeds, config, masks=masks, mask_mode="fixed", rows=rows)
    members = tuple(Member(pr, s, r, mk) for pr, s, r, mk in zip(params, seeds, rows, masks))
    return Ensemble(spec, members, "extra_nn")


def member_predictions(ensemble: Ensemble, X) -> np.ndarray:
    """Deterministic prediction of every member, shape ``(T, n)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.stack([predict(m.params, X, m.mask) for m in ensemble.members])


def ensemble_predict(ensemble: Ensemble, x):
    """Return ``(mean, member_preds)`` at ``x`` (one row or a matrix of rows)."""
    single = np.ndim(x) == 1
    P = member_predictions(ensemble, x)
    mean = member_mean(P)
    if single:
        return float(mean[0]), P[:, 0]
    return mean, P


def train_dropout_network(X, y, p: float, spec: NetworkSpec, config: TrainConfig) -> Parameters:
    """One network trained with a fresh dropout mask per mini-batch."""
    return train_members(spec, X, y, [config.seed], config, mask_mode="per_step_dropout", p=p)[0]


def mc_dropout_predict(params: Parameters, x, T: int, p: float, seed) -> np.ndarray:
    """``T`` stochastic forward passes, each with a fresh inverted-dropout mask.

    Returns shape ``(T,)`` for a single row or ``(T, n)`` for a matrix; one
    mask is shared by all rows within a pass.
    """
    if T < 1:
        raise ValueError("T must be positive")
    single = np.ndim(x) == 1
    X = np.atleast_2d(np.asarray(x, dtype=float))
    spec = params.spec
    rng = np.random.default_rng(seed)
    out = np.empty((T, X.shape[0]))
    for t in range(T):
        mask = sample_mask(spec, p, rng, MaskMode.TEST_STOCHASTIC)
        out[t] = predict(params, X, mask)
    return out[:, 0] if single else out
