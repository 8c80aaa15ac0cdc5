"""Repeated random-split RMSPE benchmark on tabular regression data."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dgp import Dataset, Standardizer
from .intervals import extra_nn_fit, mc_dropout_predict, member_mean, member_predictions, train_dropout_network
from .network import NetworkSpec, TrainConfig, derive_seeds, predict, train
from .simulation import max_workers

log = logging.getLogger(__name__)

BENCH_METHODS = ("extra_nn", "mc_dropout", "single")

# Expected (rows, feature columns) of the usual UCI regression files, keyed by file stem.
DATASET_SHAPES = {
    "boston": (506, 13),
    "yacht": (308, 6),
    "energy": (768, 8),
    "concrete": (1030, 8),
    "kin8nm": (8192, 8),
    "naval": (11934, 16),
    "power": (9568, 4),
    "protein": (45730, 9),
    "wine": (1599, 11),
    "msd": (515345, 90),
}
HUGE_DATASETS = ("msd",)
# (splits, hidden width) for the large files; everything else uses 20 splits and width 50.
DATASET_TIERS = {"protein": (5, 100), "msd": (1, 100)}
DEFAULT_TIER = (20, 50)


def tier_for(path) -> tuple[int, int]:
    return DATASET_TIERS.get(dataset_key(path), DEFAULT_TIER)


class DatasetError(ValueError):
    pass


def dataset_key(path) -> str:
    return Path(path).stem.lower()


def load_table(path) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of a CSV; errors name the offending row (1 = first data row)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DatasetError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DatasetError(f"{path} has a header but no data rows")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise DatasetError(f"row {i} has {len(row)} cells, expected {len(header)}")
        try:
            values[i - 1] = [float(c) for c in row]
        except ValueError:
            raise DatasetError(f"row {i} has a non-numeric cell: {row}") from None
        if not np.isfinite(values[i - 1]).all():
            raise DatasetError(f"row {i} has a non-finite value")
    return header, values


def load_csv(path, target: str) -> Dataset:
    """Read a headered numeric CSV; every column except ``target`` becomes a feature."""
    header, values = load_table(path)
    if target not in header:
        raise DatasetError(f"target column {target!r} not in header {header}")
    j = header.index(target)
    features = [h for h in header if h != target]
    data = Dataset(np.delete(values, j, axis=1), values[:, j], columns=tuple(features), target=target)
    expected = DATASET_SHAPES.get(dataset_key(path))
    if expected is not None and (data.n, data.d) != expected:
        log.warning("%s: expected %d rows x %d features, found %d x %d",
                    Path(path).name, expected[0], expected[1], data.n, data.d)
    return data


@dataclass(frozen=True)
class BenchmarkConfig:
    data: str
    target: str
    method: str = "extra_nn"
    T: int = 70
    n_splits: int = 20
    train_fraction: float = 0.9
    hidden_width: int = 50
    epochs: int = 40
    p: float = 0.95
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.method not in BENCH_METHODS:
            raise ValueError(f"method must be one of {BENCH_METHODS}, got {self.method!r}")
        if self.n_splits < 1:
            raise ValueError("n_splits must be at least 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.method != "single" and self.T < 1:
            raise ValueError("T must be positive")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BenchmarkResult:
    dataset: str
    method: str
    T: int | None
    per_split: list[float]
    runtime_s: float = field(default=0.0, compare=False)

    @property
    def mean_rmspe(self) -> float:
        return float(np.mean(self.per_split))

    @property
    def se(self) -> float | None:
        n = len(self.per_split)
        if n < 2:
            return None
        return float(np.std(self.per_split, ddof=1) / math.sqrt(n))

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "method": self.method, "T": self.T,
                "mean_rmspe": self.mean_rmspe, "se": self.se,
                "per_split": list(self.per_split), "runtime_s": self.runtime_s}


def split_protocol(n: int, n_splits: int, seed: int, train_fraction: float = 0.9):
    """``n_splits`` random (train, test) index pairs; the train part has ``floor(fraction * n)`` rows."""
    if n < 10:
        raise ValueError(f"need at least 10 rows, got {n}")
    n_train = int(math.floor(train_fraction * n))
    rng = np.random.default_rng([int(seed), 0x5B11])
    splits = []
    for _ in range(n_splits):
        perm = rng.permutation(n)
        splits.append((np.sort(perm[:n_train]), np.sort(perm[n_train:])))
    return splits


def fold_standardizer(train_set: Dataset) -> Standardizer:
    """Training-fold statistics; constant feature columns are centered but not scaled."""
    x_std = train_set.X.std(axis=0)
    x_std = np.where(x_std > 0, x_std, 1.0)
    y_std = float(train_set.y.std()) or 1.0
    return Standardizer(train_set.X.mean(axis=0), x_std, float(train_set.y.mean()), y_std)


def fit_predict(config: BenchmarkConfig, train_set: Dataset, X_test, seed: int) -> np.ndarray:
    """Fit the configured method on standardized data and predict on the raw target scale."""
    stats = fold_standardizer(train_set)
    Xtr, ytr = stats.transform_x(train_set.X), stats.transform_y(train_set.y)
    Xte = stats.transform_x(X_test)
    spec = NetworkSpec(train_set.d, (config.hidden_width,))
    tc = config.train_config(seed)
    if config.method == "extra_nn":
        if config.T < 2:
            pred = predict(train(spec, Xtr, ytr, tc), Xte)
        else:
            pred = member_mean(member_predictions(extra_nn_fit(Xtr, ytr, config.T, config.p, spec, tc), Xte))
    elif config.method == "mc_dropout":
        net = train_dropout_network(Xtr, ytr, config.p, spec, tc)
        pred = member_mean(np.atleast_2d(mc_dropout_predict(net, Xte, config.T, config.p, derive_seeds(seed, 2)[1])))
    else:
        pred = predict(train(spec, Xtr, ytr, tc), Xte)
    return stats.inverse_y(pred)


def rmspe(targets, predictions) -> float:
    resid = np.asarray(targets, dtype=float) - np.asarray(predictions, dtype=float)
    return float(np.sqrt(np.mean(resid**2)))


def _split_job(args):
    config, data, train_idx, test_idx, seed = args
    tr, te = data.subset(train_idx), data.subset(test_idx)
    return rmspe(te.y, fit_predict(config, tr, te.X, seed))


def run_benchmark(config: BenchmarkConfig, data: Dataset | None = None) -> BenchmarkResult:
    start = time.perf_counter()
    if data is None:
        data = load_csv(config.data, config.target)
    splits = split_protocol(data.n, config.n_splits, config.seed, config.train_fraction)
    seeds = derive_seeds(config.seed, config.n_splits)
    jobs = [(config, data, tr, te, s) for (tr, te), s in zip(splits, seeds)]
    workers = min(max_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_split_job, jobs))
    else:
        scores = [_split_job(j) for j in jobs]
    T = None if config.method == "single" else config.T
    return BenchmarkResult(dataset_key(config.data), config.method, T, scores,
                           time.perf_counter() - start)
