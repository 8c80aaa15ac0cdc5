"""Feedforward ReLU network engine.

Everything here is plain numpy. The numerical kernels operate on a leading
"member" axis so that an ensemble of equally shaped networks can be trained in
lockstep; a single network is simply a stack of one.

Canonical parameter order (used by :func:`jacobian` and
:meth:`Parameters.flatten`): layer by layer from the input side, and within a
layer the weight matrix in row-major order followed by the bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .masks import Mask, MaskMode, sample_mask

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-7


class NumericalError(ArithmeticError):
    """A forward pass or parameter update produced non-finite values."""


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int = 1
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(z) for z in self.hidden_widths))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if len(self.hidden_widths) < 1:
            raise ValueError("at least one hidden layer is required")
        if any(z < 1 for z in self.hidden_widths):
            raise ValueError(f"hidden widths must be positive, got {self.hidden_widths}")
        if self.output_dim != 1:
            raise ValueError("only scalar outputs are supported")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    @property
    def size(self) -> int:
        """Total number of hidden units."""
        return sum(self.hidden_widths)

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum(sizes[i + 1] * (sizes[i] + 1) for i in range(len(sizes) - 1))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "output_dim": self.output_dim,
            "activation": self.activation,
        }


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Parameters:
    """Weights ``W^1..W^{N+1}`` (shape ``(out, in)``) and biases ``b_1..b_{N+1}``.

    Gradients and Adam moments reuse this container.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        ws = tuple(_frozen(w) for w in self.weights)
        bs = tuple(_frozen(b) for b in self.biases)
        if len(ws) != len(bs) or len(ws) < 2:
            raise ValueError("need matching weight/bias lists with at least two layers")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i + 1}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise ValueError(f"layer {i + 1}: expects {w.shape[1]} inputs, previous layer has {ws[i - 1].shape[0]}")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def spec(self) -> NetworkSpec:
        return NetworkSpec(
            input_dim=self.weights[0].shape[1],
            hidden_widths=tuple(w.shape[0] for w in self.weights[:-1]),
            output_dim=self.weights[-1].shape[0],
        )

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def unflatten(cls, spec: NetworkSpec, vector) -> "Parameters":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (spec.n_params,):
            raise ValueError(f"expected {spec.n_params} values, got shape {vector.shape}")
        sizes = spec.layer_sizes
        ws, bs, pos = [], [], 0
        for i in range(len(sizes) - 1):
            n_w = sizes[i + 1] * sizes[i]
            ws.append(vector[pos:pos + n_w].reshape(sizes[i + 1], sizes[i]))
            pos += n_w
            bs.append(vector[pos:pos + sizes[i + 1]])
            pos += sizes[i + 1]
        return cls(tuple(ws), tuple(bs))

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "Parameters":
        return cls(tuple(arrays[0::2]), tuple(arrays[1::2]))

    def zeros_like(self) -> "Parameters":
        return Parameters.from_arrays([np.zeros_like(a) for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass(frozen=True)
class OptimizerState:
    m: Parameters
    v: Parameters
    t: int = 0
    learning_rate: float = 0.001
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    @classmethod
    def initial(cls, params: Parameters, learning_rate: float = 0.001, **kw) -> "OptimizerState":
        zeros = params.zeros_like()
        return cls(m=zeros, v=zeros, t=0, learning_rate=learning_rate, **kw)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.001
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": int(self.seed),
            "shuffle": self.shuffle,
        }


@dataclass
class Activations:
    """Cache of a forward pass: pre-activations and (masked) hidden outputs."""

    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    hidden: list[np.ndarray] = field(default_factory=list)
    multipliers: list[np.ndarray | None] = field(default_factory=list)


# ---------------------------------------------------------------------------
# initialization


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_network(spec: NetworkSpec, seed) -> Parameters:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    return _init_from_rng(spec, rng)


def _init_from_rng(spec: NetworkSpec, rng: np.random.Generator) -> Parameters:
    sizes = spec.layer_sizes
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = glorot_limit(fan_in, fan_out)
        ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return Parameters(tuple(ws), tuple(bs))


# ---------------------------------------------------------------------------
# stacked kernels: weights (T, out, in), biases (T, out), inputs (T, B, d)


def _stack(params_list: Sequence[Parameters]) -> list[np.ndarray]:
    return [np.stack(arrs) for arrs in zip(*(p.arrays() for p in params_list))]


def _unstack(arrays: Sequence[np.ndarray]) -> list[Parameters]:
    return [Parameters.from_arrays([a[t] for a in arrays]) for t in range(arrays[0].shape[0])]


def _forward_stack(arrays, X, multipliers=None):
    """Return outputs ``(T, B)`` and the cache needed by :func:`_backward_stack`."""
    n_layers = len(arrays) // 2
    h = X
    cache = Activations(inputs=X)
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_layers - 1):
            W, b = arrays[2 * n], arrays[2 * n + 1]
            z = np.matmul(h, np.swapaxes(W, 1, 2)) + b[:, None, :]
            h = np.maximum(z, 0.0)
            mult = None if multipliers is None else multipliers[n]
            if mult is not None:
                h = h * mult
            cache.pre.append(z)
            cache.hidden.append(h)
            cache.multipliers.append(mult)
        W, b = arrays[-2], arrays[-1]
        out = np.matmul(h, np.swapaxes(W, 1, 2))[..., 0] + b[:, None, 0]
    if not np.isfinite(out).all():
        raise NumericalError("numerical overflow in forward pass")
    return out, cache


def _backward_from_output(arrays, cache, d_out):
    """Backpropagate ``d_out`` (T, B) = dL/df through the cached pass.

    Returns gradients summed over the batch axis, one array per parameter array.
    """
    n_layers = len(arrays) // 2
    grads = [None] * len(arrays)
    delta = d_out[..., None]  # (T, B, 1)
    below = cache.hidden[-1]
    grads[-2] = np.matmul(np.swapaxes(delta, 1, 2), below)
    grads[-1] = delta.sum(axis=1)
    for n in range(n_layers - 2, -1, -1):
        W_above = arrays[2 * (n + 1)]
        dh = np.matmul(delta, W_above)
        if cache.multipliers[n] is not None:
            dh = dh * cache.multipliers[n]
        delta = dh * (cache.pre[n] > 0.0)
        below = cache.inputs if n == 0 else cache.hidden[n - 1]
        grads[2 * n] = np.matmul(np.swapaxes(delta, 1, 2), below)
        grads[2 * n + 1] = delta.sum(axis=1)
    return grads


def _mse_gradient_stack(arrays, X, y, multipliers=None):
    out, cache = _forward_stack(arrays, X, multipliers)
    resid = out - y
    d_out = 2.0 * resid / X.shape[1]
    return _backward_from_output(arrays, cache, d_out), float(np.mean(resid**2))


def _adam_update(arrays, grads, m, v, t, lr, beta1, beta2, eps):
    """One Adam step on lists of same-shaped arrays. ``t`` is the new step count."""
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, mi, vi in zip(arrays, grads, m, v):
        mi = beta1 * mi + (1.0 - beta1) * g
        vi = beta2 * vi + (1.0 - beta2) * g * g
        step = lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
        new_p.append(p - step)
        new_m.append(mi)
        new_v.append(vi)
    if not all(np.isfinite(a).all() for a in new_p):
        raise NumericalError("numerical overflow in parameter update")
    return new_p, new_m, new_v


# ---------------------------------------------------------------------------
# single-network API


def _multipliers_for(mask: Mask | None, train_mode: bool, widths, batch_shape=(1, 1)):
    if mask is None:
        return None
    if tuple(len(r) for r in mask.bits) != tuple(widths):
        raise ValueError(f"mask widths {[len(r) for r in mask.bits]} do not match network {list(widths)}")
    if mask.mode is MaskMode.PER_STEP and not train_mode:
        return None
    return [m.reshape(*batch_shape, -1) for m in mask.multipliers()]


def _as_rows(x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if not np.isfinite(X).all():
        raise ValueError("inputs must be finite")
    return X, single


def forward(params: Parameters, x, mask: Mask | None = None, train_mode: bool = False):
    """Evaluate the network at ``x`` (one row or a matrix of rows).

    A ``per_step`` mask only takes effect when ``train_mode`` is true;
    ``test_stochastic`` and ``fixed_structural`` masks always apply.
    Returns ``(prediction, activations)``.
    """
    X, single = _as_rows(x)
    if X.shape[1] != params.weights[0].shape[1]:
        raise ValueError(f"expected {params.weights[0].shape[1]} features, got {X.shape[1]}")
    arrays = [a[None] for a in params.arrays()]
    mult = _multipliers_for(mask, train_mode, params.spec.hidden_widths)
    out, cache = _forward_stack(arrays, X[None], mult)
    out = out[0]
    return (float(out[0]) if single else out), cache


def predict(params: Parameters, X, mask: Mask | None = None) -> np.ndarray:
    X, _ = _as_rows(X)
    return forward(params, X, mask)[0]


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    keys = np.column_stack([X, y])
    return np.lexsort(keys.T[::-1])


def backward(params: Parameters, X, y=None, mask: Mask | None = None) -> Parameters:
    """Exact gradient of the batch mean squared error.

    ``X`` may be a matrix with targets ``y``, or a list of ``(x, y)`` pairs.
    Rows are put in a canonical order first, so the result does not depend on
    the order of the batch.
    """
    if y is None:
        pairs = list(X)
        if not pairs:
            raise ValueError("empty batch")
        X = np.array([np.asarray(p[0], dtype=float) for p in pairs])
        y = np.array([float(p[1]) for p in pairs])
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y lengths differ")
    order = _canonical_order(X, y)
    X, y = X[order], y[order]
    arrays = [a[None] for a in params.arrays()]
    mult = _multipliers_for(mask, True, params.spec.hidden_widths)
    grads, _ = _mse_gradient_stack(arrays, X[None], y[None], mult)
    return Parameters.from_arrays([g[0] for g in grads])


def loss(params: Parameters, X, y, mask: Mask | None = None) -> float:
    pred = forward(params, X, mask, train_mode=True)[0]
    return float(np.mean((np.atleast_1d(pred) - np.asarray(y, dtype=float)) ** 2))


def adam_step(params: Parameters, grads: Parameters, state: OptimizerState):
    t = state.t + 1
    p, m, v = _adam_update(
        params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays(),
        t, state.learning_rate, state.beta1, state.beta2, state.epsilon,
    )
    new_state = OptimizerState(
        m=Parameters.from_arrays(m), v=Parameters.from_arrays(v), t=t,
        learning_rate=state.learning_rate, beta1=state.beta1, beta2=state.beta2,
        epsilon=state.epsilon,
    )
    return Parameters.from_arrays(p), new_state


def jacobian(params: Parameters, x, mask: Mask | None = None) -> np.ndarray:
    """Per-example gradient of the network output with respect to all parameters.

    Returns a vector of length ``n_params`` for a single row, or an
    ``(n, n_params)`` matrix for a matrix of rows, in canonical order.
    """
    X, single = _as_rows(x)
    arrays = [a[None] for a in params.arrays()]
    mult = _multipliers_for(mask, False, params.spec.hidden_widths)
    _, cache = _forward_stack(arrays, X[None], mult)
    n_layers = len(arrays) // 2
    n = X.shape[0]
    blocks = [None] * len(arrays)
    delta = np.ones((n, 1))
    blocks[-2] = cache.hidden[-1][0][:, None, :] * delta[:, :, None]
    blocks[-1] = delta
    for k in range(n_layers - 2, -1, -1):
        dh = delta @ params.weights[k + 1]
        if cache.multipliers[k] is not None:
            dh = dh * cache.multipliers[k][0]
        delta = dh * (cache.pre[k][0] > 0.0)
        below = X if k == 0 else cache.hidden[k - 1][0]
        blocks[2 * k] = delta[:, :, None] * below[:, None, :]
        blocks[2 * k + 1] = delta
    J = np.concatenate([b.reshape(n, -1) for b in blocks], axis=1)
    return J[0] if single else J


# ---------------------------------------------------------------------------
# training


MASK_MODES = ("none", "per_step_dropout", "fixed")


def derive_seeds(seed, n: int) -> list[int]:
    """``n`` independent 63-bit seeds from one master seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]


def train(spec: NetworkSpec, X, y, config: TrainConfig, mask: Mask | None = None,
          mask_mode: str = "none", p: float | None = None) -> Parameters:
    """Train one network with mini-batch Adam.

    ``mask_mode`` is ``"none"``, ``"per_step_dropout"`` (a fresh Bernoulli(p)
    mask per mini-batch with inverted scaling; ``p`` or ``mask.p`` gives the
    retention probability) or ``"fixed"`` (``mask`` held for every step, no
    scaling).
    """
    if mask_mode == "per_step_dropout" and p is None:
        if mask is None:
            raise ValueError("per_step_dropout needs a retention probability")
        p = mask.p
    return train_members(spec, X, y, [config.seed], config,
                         masks=[mask] if mask_mode == "fixed" else None,
                         mask_mode=mask_mode, p=p)[0]


def train_members(spec: NetworkSpec, X, y, seeds: Sequence[int], config: TrainConfig,
                  masks: Sequence[Mask] | None = None, mask_mode: str = "none",
                  p: float | None = None, rows: Sequence[np.ndarray] | None = None,
                  init: Sequence[Parameters] | None = None) -> list[Parameters]:
    """Train ``len(seeds)`` networks of the same shape in lockstep.

    Member ``t`` draws its initial weights, epoch shuffles and (for
    ``per_step_dropout``) its dropout masks from ``seeds[t]`` alone, and trains
    on ``X[rows[t]]`` (all rows when ``rows`` is None). ``config.seed`` is
    not used here; callers pass member seeds explicitly.
    """
    if mask_mode not in MASK_MODES:
        raise ValueError(f"mask_mode must be one of {MASK_MODES}, got {mask_mode!r}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y lengths differ")
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"spec expects {spec.input_dim} features, data has {X.shape[1]}")
    T = len(seeds)
    if rows is None:
        rows = [np.arange(X.shape[0])] * T
    rows = [np.asarray(r, dtype=np.intp) for r in rows]
    M = len(rows[0])
    if any(len(r) != M for r in rows):
        raise ValueError("all members must train on the same number of rows")
    if config.batch_size > M:
        raise ValueError(f"batch_size {config.batch_size} exceeds training-set size {M}")
    if mask_mode == "fixed":
        if masks is None or len(masks) != T or any(m is None for m in masks):
            raise ValueError("fixed mask_mode needs one mask per member")
    elif masks is not None and any(m is not None for m in masks):
        raise ValueError("masks are only accepted with mask_mode='fixed'")
    if mask_mode == "per_step_dropout" and not (p is not None and 0.0 < p <= 1.0):
        raise ValueError("per_step_dropout needs 0 < p <= 1")

    rngs = [np.random.default_rng(s) for s in seeds]
    params0 = list(init) if init is not None else [_init_from_rng(spec, r) for r in rngs]
    arrays = _stack(params0)
    m = [np.zeros_like(a) for a in arrays]
    v = [np.zeros_like(a) for a in arrays]
    widths = spec.hidden_widths
    fixed_mult = None
    if mask_mode == "fixed":
        fixed_mult = [np.stack([mk.multipliers()[n] for mk in masks])[:, None, :]
                      for n in range(len(widths))]

    Xs = np.stack([X[r] for r in rows])  # (T, M, d)
    ys = np.stack([y[r] for r in rows])
    t = 0
    member_idx = np.arange(T)[:, None]
    for _ in range(config.epochs):
        if config.shuffle:
            order = np.stack([rng.permutation(M) for rng in rngs])
        else:
            order = np.broadcast_to(np.arange(M), (T, M))
        for start in range(0, M, config.batch_size):
            idx = order[:, start:start + config.batch_size]
            xb = Xs[member_idx, idx]
            yb = ys[member_idx, idx]
            if mask_mode == "per_step_dropout":
                per_member = [sample_mask(spec, p, rng, MaskMode.PER_STEP).multipliers() for rng in rngs]
                mult = [np.stack([pm[n] for pm in per_member])[:, None, :] for n in range(len(widths))]
            else:
                mult = fixed_mult
            grads, _ = _mse_gradient_stack(arrays, xb, yb, mult)
            t += 1
            arrays, m, v = _adam_update(arrays, grads, m, v, t, config.learning_rate,
                                        ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON)
    return _unstack(arrays)


def predict_members(params_list: Sequence[Parameters], X, masks: Sequence[Mask | None] | None = None) -> np.ndarray:
    """Deterministic predictions of several networks, shape ``(T, n)``."""
    X, _ = _as_rows(X)
    masks = masks if masks is not None else [None] * len(params_list)
    return np.stack([predict(p, X, mk) for p, mk in zip(params_list, masks)])


def subnetwork(params: Parameters, mask: Mask) -> Parameters:
    """Physically delete the units a mask drops (no rescaling)."""
    keep = [np.asarray(r, dtype=bool) for r in mask.bits]
    ws, bs = [], []
    prev = None
    for n, (w, b) in enumerate(zip(params.weights, params.biases)):
        w = w if prev is None else w[:, prev]
        if n < len(keep):
            w, b = w[keep[n]], b[keep[n]]
            prev = keep[n]
        ws.append(w)
        bs.append(b)
    return Parameters(tuple(ws), tuple(bs))
