"""Fitted interval models: training, interval construction and npz archives."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .intervals import (
    DEFAULT_ALPHAS,
    aleatoric_variance,
    boot_bias_corrected_interval,
    boot_mean_interval,
    boot_normal_interval,
    boot_percentile_interval,
    bootstrap_fit,
    delta_leverage,
    ensemble_mean_interval,
    extra_nn_fit,
    extra_nn_interval,
    mc_dropout_interval,
    mc_dropout_predict,
    member_mean,
    normal_interval,
    train_dropout_network,
)
from .masks import Mask, MaskMode
from .network import NetworkSpec, Parameters, TrainConfig, derive_seeds, predict, train

MODEL_METHODS = ("delta", "boot_percentile", "boot_normal", "boot_bias", "boot_mean", "mc_dropout", "extra_nn")
USES_P = ("mc_dropout", "extra_nn")
USES_T = ("boot_percentile", "boot_normal", "boot_bias", "boot_mean", "mc_dropout", "extra_nn")
ARCHIVE_VERSION = 1


class ArchiveError(ValueError):
    pass


@dataclass(frozen=True)
class FittedModel:
    """Everything needed to rebuild intervals at new inputs.

    ``members`` holds ``(params, mask)`` pairs trained on the standardized
    target; ``original`` is the full-sample network of the bootstrap normal
    and bias-corrected variants. ``X_train`` is the training design on the
    network's input scale and ``y_train`` the raw training target.
    """

    method: str
    spec: NetworkSpec
    T: int | None
    p: float | None
    seed: int
    y_mean: float
    y_scale: float
    members: tuple[tuple[Parameters, Mask | None], ...]
    X_train: np.ndarray
    y_train: np.ndarray
    original: Parameters | None = None
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None

    def with_feature_stats(self, x_mean, x_std) -> "FittedModel":
        """Attach the feature standardization that maps raw inputs onto ``X_train``'s scale."""
        return replace(self, x_mean=np.asarray(x_mean, dtype=float), x_std=np.asarray(x_std, dtype=float))

    def raw(self, pred):
        return np.asarray(pred, dtype=float) * self.y_scale + self.y_mean

    def member_preds(self, X) -> np.ndarray:
        return self.raw(np.stack([predict(pr, X, mk) for pr, mk in self.members]))


def fit_model(method: str, X, y, spec: NetworkSpec, config: TrainConfig, T: int | None = None,
              p: float | None = None, scale_y: bool = True) -> FittedModel:
    """Train the networks ``method`` needs on ``(X, y)``.

    With ``scale_y`` the networks see a standardized target; every
    prediction the model hands out is back on the raw scale.
    """
    if method not in MODEL_METHODS:
        raise ValueError(f"unknown method {method!r}")
    if method in USES_P and p is None:
        raise ValueError(f"{method} needs a retention probability p")
    if method in USES_T and (T is None or T < 2):
        raise ValueError(f"{method} needs T >= 2")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    y_mean, y_scale = (float(y.mean()), float(y.std()) or 1.0) if scale_y else (0.0, 1.0)
    y_fit = (y - y_mean) / y_scale
    original = None
    if method == "extra_nn":
        ens = extra_nn_fit(X, y_fit, T, p, spec, config)
        members = tuple((m.params, m.mask) for m in ens.members)
    elif method == "mc_dropout":
        members = ((train_dropout_network(X, y_fit, p, spec, config), None),)
    elif method == "delta":
        members = ((train(spec, X, y_fit, config), None),)
    else:
        ens = bootstrap_fit(X, y_fit, T, spec, config)
        members = tuple((m.params, None) for m in ens.members)
        if method in ("boot_normal", "boot_bias"):
            original_config = TrainConfig(**{**config.to_dict(), "seed": derive_seeds(config.seed, 3)[2]})
            original = train(spec, X, y_fit, original_config)
    if method not in USES_T:
        T = None
    if method not in USES_P:
        p = None
    return FittedModel(method, spec, T, p, int(config.seed), y_mean, y_scale, members, X, y, original)


def model_intervals(model: FittedModel, X, alphas: Sequence[float] = DEFAULT_ALPHAS, targets=None):
    """Point predictions and ``{alpha: PredictionInterval}`` at the rows of ``X``.

    The pooled noise variance comes from ``targets`` when given and from the
    training residuals otherwise; the delta method always uses training
    residuals.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    method = model.method

    def noise(center_fn):
        if targets is None:
            return aleatoric_variance(center_fn(model.X_train), model.y_train)
        return aleatoric_variance(center_fn(X), targets)

    if method == "extra_nn":
        P = model.member_preds(X)
        if targets is None:
            s2 = noise(lambda Z: member_mean(model.member_preds(Z)))
            return member_mean(P), {a: ensemble_mean_interval(P, s2, a, "extra_nn") for a in alphas}
        return member_mean(P), {a: extra_nn_interval(P, targets, a) for a in alphas}

    if method == "mc_dropout":
        net = model.members[0][0]
        pass_seed = derive_seeds(model.seed, 2)[1]

        def passes(Z):
            return model.raw(np.atleast_2d(mc_dropout_predict(net, Z, model.T, model.p, pass_seed)))

        S = passes(X)
        center = member_mean(S)
        s2 = aleatoric_variance(center, targets) if targets is not None else noise(lambda Z: member_mean(passes(Z)))
        return center, {a: mc_dropout_interval(S, s2, a) for a in alphas}

    if method == "delta":
        net = model.members[0][0]
        s2 = aleatoric_variance(model.raw(predict(net, model.X_train)), model.y_train)
        lev, ridge = delta_leverage(net, model.X_train, X)
        center = model.raw(predict(net, X))
        return center, {a: normal_interval(center, s2 * lev, s2, a, "delta", ridge=ridge) for a in alphas}

    P = model.member_preds(X)
    mean = member_mean(P)
    if method == "boot_mean":
        s2 = noise(lambda Z: member_mean(model.member_preds(Z)))
        return mean, {a: boot_mean_interval(P, s2, a) for a in alphas}
    if method == "boot_percentile":
        return mean, {a: boot_percentile_interval(P, a) for a in alphas}
    original = model.raw(predict(model.original, X))
    s2 = noise(lambda Z: model.raw(predict(model.original, Z)))
    if method == "boot_normal":
        return original, {a: boot_normal_interval(original, P, s2, a) for a in alphas}
    return 2 * original - mean, {a: boot_bias_corrected_interval(original, P, s2, a) for a in alphas}


# ---------------------------------------------------------------------------
# archives


def _put_params(arrays: dict, prefix: str, params: Parameters) -> None:
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"{prefix}_W{l}"] = np.asarray(W)
        arrays[f"{prefix}_b{l}"] = np.asarray(b)


def _get_params(z, prefix: str, n_layers: int) -> Parameters:
    return Parameters(tuple(np.array(z[f"{prefix}_W{l}"]) for l in range(n_layers)),
                      tuple(np.array(z[f"{prefix}_b{l}"]) for l in range(n_layers)))


def save_model(model: FittedModel, path) -> None:
    meta = {
        "version": ARCHIVE_VERSION, "method": model.method, "spec": model.spec.to_dict(),
        "T": model.T, "p": model.p, "seed": model.seed, "y_mean": model.y_mean, "y_scale": model.y_scale,
        "n_members": len(model.members), "has_original": model.original is not None,
        "masks": [mk is not None for _, mk in model.members],
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True)), "X_train": model.X_train, "y_train": model.y_train}
    for i, (params, mask) in enumerate(model.members):
        _put_params(arrays, f"m{i}", params)
        if mask is not None:
            arrays[f"m{i}_p"] = np.array(mask.p)
            for l, bits in enumerate(mask.bits):
                arrays[f"m{i}_mask{l}"] = bits
    if model.original is not None:
        _put_params(arrays, "orig", model.original)
    if model.x_mean is not None:
        arrays["x_mean"], arrays["x_std"] = model.x_mean, model.x_std
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> FittedModel:
    """Read an archive written by :func:`save_model`; raises :class:`ArchiveError` if it is malformed."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != ARCHIVE_VERSION:
                raise ArchiveError(f"unsupported archive version {meta.get('version')!r}")
            sd = meta["spec"]
            spec = NetworkSpec(sd["input_dim"], tuple(sd["hidden_widths"]), sd["output_dim"], sd["activation"])
            n_layers = len(spec.hidden_widths) + 1
            members = []
            for i in range(meta["n_members"]):
                params = _get_params(z, f"m{i}", n_layers)
                mask = None
                if meta["masks"][i]:
                    bits = tuple(np.array(z[f"m{i}_mask{l}"]) for l in range(len(spec.hidden_widths)))
                    mask = Mask(bits, float(z[f"m{i}_p"]), MaskMode.FIXED_STRUCTURAL)
                if params.spec != spec:
                    raise ArchiveError(f"member {i} does not match the stored architecture")
                members.append((params, mask))
            original = _get_params(z, "orig", n_layers) if meta["has_original"] else None
            x_mean = np.array(z["x_mean"]) if "x_mean" in z else None
            x_std = np.array(z["x_std"]) if "x_std" in z else None
            return FittedModel(meta["method"], spec, meta["T"], meta["p"], meta["seed"], meta["y_mean"],
                               meta["y_scale"], tuple(members), np.array(z["X_train"]), np.array(z["y_train"]),
                               original, x_mean, x_std)
    except ArchiveError:
        raise
    except (OSError, KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"cannot read model archive {path}: {exc}") from exc
