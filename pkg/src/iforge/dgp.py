"""Simulated regression data: a linear model with interactions and a small ReLU network."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

# Target correlation as printed; it is not symmetric ((1,5) vs (5,1), (3,5) vs (5,3)).
PRINTED_CORRELATION = np.array([
    [1.0, 0.5, 0.6, 0.7, 0.5],
    [0.5, 1.0, 0.7, 0.8, 0.5],
    [0.6, 0.7, 1.0, 0.7, 0.5],
    [0.7, 0.8, 0.7, 1.0, 0.8],
    [0.9, 0.5, 0.6, 0.8, 1.0],
])

NONLINEAR_MEANS = np.array([-4.0, 2.0, 2.0, 2.0, 4.0])
LINEAR_MEANS = np.array([-4.0, 1.0, 1.0, 1.0, 5.0])
NONLINEAR_NOISE_SD = 0.7
LINEAR_NOISE_SD = 1.0

_NL_W1 = np.array([
    [-3.0, -2.0, 1.0, 5.0, -3.0],
    [4.0, 5.0, 2.0, 2.0, -5.0],
    [-3.0, -4.0, 2.0, -2.0, 3.0],
])
_NL_W2 = np.array([
    [-1.0, 3.0, 5.0],
    [-2.0, 3.0, 5.0],
])
_NL_W3 = np.array([1.0, 2.0])


@dataclass(frozen=True)
class Standardizer:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    def transform_x(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_std

    def inverse_x(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.x_std + self.x_mean

    def transform_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def inverse_y(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {"x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "y_mean": self.y_mean, "y_std": self.y_std}


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    f: np.ndarray | None = None
    stats: Standardizer | None = None
    columns: tuple[str, ...] | None = None
    target: str = "y"

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if np.isnan(X).any() or np.isnan(y).any():
            raise ValueError("dataset contains NaN")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.f is not None:
            object.__setattr__(self, "f", np.asarray(self.f, dtype=float).ravel())
        if self.columns is None:
            object.__setattr__(self, "columns", tuple(f"x{i + 1}" for i in range(X.shape[1])))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, X=self.X[idx], y=self.y[idx], f=None if self.f is None else self.f[idx])

    def split(self, n_train: int) -> tuple["Dataset", "Dataset"]:
        """First ``n_train`` rows for training, the rest for testing."""
        if not 0 < n_train < self.n:
            raise ValueError(f"n_train must be in (0, {self.n}), got {n_train}")
        return self.subset(np.arange(n_train)), self.subset(np.arange(n_train, self.n))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = [*self.columns, self.target]
            if self.f is not None:
                header.append("f_true")
            w.writerow(header)
            for i in range(self.n):
                row = [*self.X[i], self.y[i]]
                if self.f is not None:
                    row.append(self.f[i])
                w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# correlation


def symmetrize(C, use: str = "lower") -> np.ndarray:
    C = np.asarray(C, dtype=float)
    tri = np.tril(C) if use == "lower" else np.triu(C)
    return tri + tri.T - np.diag(np.diag(C))


def correlation_target(C=PRINTED_CORRELATION, clip: float = 1e-6) -> np.ndarray:
    """Symmetrized (lower triangle) target correlation, forced positive definite."""
    S = symmetrize(C, "lower")
    if not np.allclose(np.diag(S), 1.0) or np.abs(S).max() > 1.0:
        raise ValueError("target must have unit diagonal and entries in [-1, 1]")
    vals, vecs = np.linalg.eigh(S)
    if vals.min() > clip:
        return S
    log.warning("target correlation not positive definite (min eigenvalue %.3g); clipping", vals.min())
    S = vecs @ np.diag(np.maximum(vals, clip)) @ vecs.T
    d = np.sqrt(np.diag(S))
    return S / np.outer(d, d)


def _cholesky(S: np.ndarray, what: str) -> np.ndarray:
    vals = np.linalg.eigvalsh(S)
    if vals.min() <= 0:
        raise np.linalg.LinAlgError(f"{what} is not positive definite (smallest eigenvalue {vals.min():.3g})")
    return np.linalg.cholesky(S)


def impose_correlation(X_raw, C) -> np.ndarray:
    """Give the columns of ``X_raw`` the correlation matrix ``C``.

    Columns are standardized, whitened with the inverse Cholesky factor of
    their empirical correlation, colored with the Cholesky factor of ``C``,
    and finally given back their original means and standard deviations.
    """
    X = np.asarray(X_raw, dtype=float)
    C = np.asarray(C, dtype=float)
    n, d = X.shape
    if C.shape != (d, d):
        raise ValueError(f"C has shape {C.shape}, data has {d} columns")
    if n < d:
        raise ValueError(f"need at least {d} rows, got {n}")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    Z = (X - mean) / std
    A_sigma = _cholesky(np.corrcoef(Z, rowvar=False), "empirical correlation")
    A_c = _cholesky(C, "target correlation")
    white = np.linalg.solve(A_sigma, Z.T).T
    return (white @ A_c.T) * std + mean


# ---------------------------------------------------------------------------
# generators


def _draw_inputs(n: int, means, rng: np.random.Generator) -> np.ndarray:
    X = rng.standard_normal((n, len(means))) + means
    if n <= len(means):
        return X
    return impose_correlation(X, correlation_target())


def nonlinear_mean(X) -> np.ndarray:
    """Noiseless response of the two-hidden-layer ReLU process (widths 3 and 2, unit biases)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    h1 = np.maximum(1.0 + X @ _NL_W1.T, 0.0)
    h2 = np.maximum(1.0 + h1 @ _NL_W2.T, 0.0)
    return 1.0 + h2 @ _NL_W3


def linear_mean(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x1, x2, x3, x4, x5 = X.T
    return (-8 * x1 + 2 * x2 + 2 * x3 + 2 * x4 + 7 * x5
            + 3 * x1 * x2 - x3 * x5 + 2 * x1 * x4)


def gen_nonlinear(n: int, seed) -> Dataset:
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    X = _draw_inputs(n, NONLINEAR_MEANS, rng)
    f = nonlinear_mean(X)
    y = f + NONLINEAR_NOISE_SD * rng.standard_normal(n)
    return Dataset(X, y, f)


def gen_linear(n: int, seed) -> Dataset:
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    X = _draw_inputs(n, LINEAR_MEANS, rng)
    f = linear_mean(X)
    y = f + LINEAR_NOISE_SD * rng.standard_normal(n)
    return Dataset(X, y, f)


GENERATORS = {"linear": gen_linear, "nonlinear": gen_nonlinear}


# ---------------------------------------------------------------------------
# normalization


def fit_standardizer(dataset: Dataset, scale_y: bool = False) -> Standardizer:
    """Column means and population standard deviations of ``dataset``."""
    mean = dataset.X.mean(axis=0)
    std = dataset.X.std(axis=0)
    for j in np.flatnonzero(std == 0):
        raise ValueError(f"column {dataset.columns[j]!r} has zero variance")
    y_mean, y_std = 0.0, 1.0
    if scale_y:
        y_mean = float(dataset.y.mean())
        y_std = float(dataset.y.std())
        if y_std == 0.0:
            y_std = 1.0
    return Standardizer(mean, std, y_mean, y_std)


def apply_standardizer(dataset: Dataset, stats: Standardizer) -> Dataset:
    # f stays on the raw target scale; only y is transformed.
    return replace(dataset, X=stats.transform_x(dataset.X), y=stats.transform_y(dataset.y), stats=stats)


def normalize(dataset: Dataset, scale_y: bool = False) -> tuple[Dataset, Standardizer]:
    """Standardize features (and optionally the target) with the dataset's own statistics."""
    stats = fit_standardizer(dataset, scale_y)
    return apply_standardizer(dataset, stats), stats


def load_dataset_csv(path: str | Path) -> Dataset:
    """Read a CSV written by :meth:`Dataset.to_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    has_f = header[-1] == "f_true"
    n_x = len(header) - (2 if has_f else 1)
    return Dataset(body[:, :n_x], body[:, n_x], body[:, -1] if has_f else None,
                   columns=tuple(header[:n_x]), target=header[n_x])
