import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iforge.masks import Mask, MaskMode
from iforge.network import (
    NetworkSpec,
    NumericalError,
    OptimizerState,
    Parameters,
    TrainConfig,
    adam_step,
    backward,
    forward,
    glorot_limit,
    init_network,
    jacobian,
    loss,
    predict,
    subnetwork,
    train,
)


def reference_forward(weights, biases, x, multipliers=None):
    """Loop-based evaluation used as an independent oracle."""
    h = list(map(float, x))
    n_layers = len(weights)
    for n in range(n_layers):
        W, b = weights[n], biases[n]
        out = []
        for i in range(len(b)):
            s = b[i] + sum(W[i][j] * h[j] for j in range(len(h)))
            if n < n_layers - 1:
                s = max(0.0, s)
                if multipliers is not None:
                    s *= multipliers[n][i]
            out.append(s)
        h = out
    return h[0]


def reference_loss(vector, spec, X, y, multipliers=None):
    p = Parameters.unflatten(spec, vector)
    preds = [reference_forward(p.weights, p.biases, x, multipliers) for x in X]
    return sum((a - b) ** 2 for a, b in zip(preds, y)) / len(y)


def central_differences(fn, vector, step=1e-5):
    g = np.empty_like(vector)
    for k in range(vector.size):
        up, down = vector.copy(), vector.copy()
        up[k] += step
        down[k] -= step
        g[k] = (fn(up) - fn(down)) / (2 * step)
    return g


def random_net(rng, max_depth=2, max_width=6, max_d=5):
    d = int(rng.integers(1, max_d + 1))
    widths = tuple(int(w) for w in rng.integers(1, max_width + 1, size=int(rng.integers(1, max_depth + 1))))
    spec = NetworkSpec(d, widths)
    params = Parameters.unflatten(spec, rng.normal(size=spec.n_params))
    return spec, params


# ---------------------------------------------------------------------------
# spec and init


def test_spec_size_and_param_count():
    spec = NetworkSpec(3, (4, 2))
    assert spec.size == 6
    assert spec.n_params == 4 * 3 + 4 + 2 * 4 + 2 + 2 + 1


@pytest.mark.parametrize("bad", [dict(input_dim=0, hidden_widths=(2,)), dict(input_dim=2, hidden_widths=()),
                                 dict(input_dim=2, hidden_widths=(0,)), dict(input_dim=2, hidden_widths=(2,), output_dim=2)])
def test_spec_rejects_invalid(bad):
    with pytest.raises(ValueError):
        NetworkSpec(**bad)


def test_init_is_deterministic_and_biases_zero():
    spec = NetworkSpec(3, (4,))
    a, b = init_network(spec, 7), init_network(spec, 7)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    assert all(not bias.any() for bias in a.biases)
    c = init_network(spec, 8)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_glorot_bound_for_two_inputs_three_units():
    assert glorot_limit(2, 3) == pytest.approx(math.sqrt(6 / 5))
    for seed in range(50):
        W1 = init_network(NetworkSpec(2, (3,)), seed).weights[0]
        assert np.abs(W1).max() <= math.sqrt(6 / 5)


# ---------------------------------------------------------------------------
# forward


def hand_net():
    return Parameters((np.array([[2.0]]), np.array([[3.0]])), (np.array([-1.0]), np.array([0.5])))


def test_forward_hand_values():
    pred, _ = forward(hand_net(), [2.0])
    assert pred == 9.5
    pred, _ = forward(hand_net(), [0.0])
    assert pred == 0.5


def test_zero_network_outputs_zero():
    spec = NetworkSpec(3, (4, 2))
    zero = Parameters.unflatten(spec, np.zeros(spec.n_params))
    assert predict(zero, np.random.default_rng(0).normal(size=(5, 3))).tolist() == [0.0] * 5


def test_forward_overflow_raises():
    spec = NetworkSpec(1, (1,))
    big = Parameters.unflatten(spec, np.array([1e200, 0.0, 1e200, 0.0]))
    with pytest.raises(NumericalError, match="numerical overflow"):
        forward(big, [1e200])


def test_forward_matches_reference():
    rng = np.random.default_rng(1)
    for _ in range(20):
        spec, params = random_net(rng)
        x = rng.normal(size=spec.input_dim)
        assert forward(params, x)[0] == pytest.approx(reference_forward(params.weights, params.biases, x), rel=1e-12)


# ---------------------------------------------------------------------------
# backward


def finite_difference_errors(n_nets, seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_nets):
        spec, params = random_net(rng)
        B = int(rng.integers(1, 6))
        X = rng.normal(size=(B, spec.input_dim))
        y = rng.normal(size=B)
        g = backward(params, X, y).flatten()
        fd = central_differences(lambda v: reference_loss(v, spec, X, y), params.flatten())
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12)))
    return worst


def test_backward_matches_finite_differences():
    assert finite_difference_errors(30, seed=11) < 1e-5


def test_backward_zero_network_zero_target():
    spec = NetworkSpec(2, (3,))
    zero = Parameters.unflatten(spec, np.zeros(spec.n_params))
    g = backward(zero, [(np.array([0.3, -1.2]), 0.0)])
    assert not g.flatten().any()


def test_backward_empty_batch_raises():
    with pytest.raises(ValueError):
        backward(hand_net(), [])


def test_backward_accepts_pairs_and_matrix():
    rng = np.random.default_rng(2)
    spec, params = random_net(rng)
    X, y = rng.normal(size=(4, spec.input_dim)), rng.normal(size=4)
    a = backward(params, X, y).flatten()
    b = backward(params, list(zip(X, y))).flatten()
    assert np.array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_backward_is_exactly_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    spec, params = random_net(rng)
    B = int(rng.integers(2, 40))
    X, y = rng.normal(size=(B, spec.input_dim)), rng.normal(size=B)
    perm = rng.permutation(B)
    assert np.array_equal(backward(params, X, y).flatten(), backward(params, X[perm], y[perm]).flatten())


def test_dropped_unit_gets_no_gradient():
    rng = np.random.default_rng(4)
    spec = NetworkSpec(3, (4, 3))
    params = Parameters.unflatten(spec, rng.normal(size=spec.n_params))
    mask = Mask((np.array([1, 0, 1, 1]), np.array([1, 1, 0])), 0.7, MaskMode.FIXED_STRUCTURAL)
    g = backward(params, rng.normal(size=(6, 3)), rng.normal(size=6), mask)
    assert not g.weights[0][1].any() and g.biases[0][1] == 0
    assert not g.weights[1][:, 1].any()
    assert not g.weights[1][2].any() and g.biases[1][2] == 0
    assert not g.weights[2][:, 2].any()


# ---------------------------------------------------------------------------
# masked network vs physically smaller network


def all_masks(widths):
    per_layer = [[np.array(bits) for bits in itertools.product((0, 1), repeat=w) if any(bits)] for w in widths]
    for combo in itertools.product(*per_layer):
        yield Mask(tuple(combo), 0.5, MaskMode.FIXED_STRUCTURAL)


@pytest.mark.parametrize("widths", [(3,), (2, 2), (1, 3), (4, 2)])
def test_masked_network_equals_deleted_subnetwork(widths):
    rng = np.random.default_rng(sum(widths))
    spec = NetworkSpec(3, widths)
    params = Parameters.unflatten(spec, rng.normal(size=spec.n_params))
    X, y = rng.normal(size=(7, 3)), rng.normal(size=7)
    for mask in all_masks(widths):
        small = subnetwork(params, mask)
        assert np.allclose(predict(params, X, mask), predict(small, X), rtol=1e-12, atol=1e-14)
        g_full = backward(params, X, y, mask)
        g_small = backward(small, X, y)
        keep = [np.flatnonzero(r) for r in mask.bits]
        for n in range(len(widths) + 1):
            W = g_full.weights[n]
            if n < len(widths):
                W = W[keep[n]]
            if n > 0:
                W = W[:, keep[n - 1]]
            assert np.allclose(W, g_small.weights[n], rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------------------
# adam


def test_adam_zero_gradient_is_a_no_op():
    params = hand_net()
    state = OptimizerState.initial(params, 0.1)
    new, st2 = adam_step(params, params.zeros_like(), state)
    assert np.array_equal(new.flatten(), params.flatten())
    assert not st2.m.flatten().any() and not st2.v.flatten().any()
    assert st2.t == 1


def test_adam_first_step_moves_by_learning_rate():
    # L = (w - 1)^2 at w = 0: gradient -2, bias-corrected first step is eta * g / (|g| + eps).
    spec = NetworkSpec(1, (1,))
    params = Parameters.unflatten(spec, np.zeros(spec.n_params))
    grads = Parameters.unflatten(spec, np.array([-2.0, 0.0, 0.0, 0.0]))
    new, _ = adam_step(params, grads, OptimizerState.initial(params, 0.1))
    assert new.flatten()[0] == pytest.approx(0.1 * 2.0 / (2.0 + 1e-7), rel=1e-12)


def test_adam_without_momentum_is_normalized_descent():
    rng = np.random.default_rng(5)
    spec, params = random_net(rng)
    g = rng.normal(size=spec.n_params)
    state = OptimizerState.initial(params, 0.05, beta1=0.0, beta2=0.0, epsilon=1e-300)
    new, _ = adam_step(params, Parameters.unflatten(spec, g), state)
    assert np.allclose(new.flatten(), params.flatten() - 0.05 * np.sign(g), rtol=0, atol=1e-15)


def test_adam_matches_textbook_recursion():
    rng = np.random.default_rng(6)
    spec, params = random_net(rng)
    state = OptimizerState.initial(params, 0.01)
    w = params.flatten()
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for t in range(1, 6):
        g = rng.normal(size=w.size)
        params, state = adam_step(params, Parameters.unflatten(spec, g), state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-7)
        assert np.allclose(params.flatten(), w, rtol=1e-12, atol=1e-14)


def test_adam_non_finite_update_raises():
    params = hand_net()
    bad = Parameters.unflatten(params.spec, np.array([np.nan, 0, 0, 0]))
    with pytest.raises(NumericalError):
        adam_step(params, bad, OptimizerState.initial(params, 0.1))


# ---------------------------------------------------------------------------
# training


def test_training_fits_a_constant():
    spec = NetworkSpec(2, (4,))
    X, y = np.array([[0.5, -0.2]]), np.array([3.0])
    params = train(spec, X, y, TrainConfig(epochs=2000, batch_size=1, learning_rate=0.01, seed=3))
    assert loss(params, X, y) < 1e-3


def test_training_is_deterministic():
    rng = np.random.default_rng(7)
    X, y = rng.normal(size=(64, 3)), rng.normal(size=64)
    cfg = TrainConfig(epochs=3, batch_size=16, learning_rate=0.01, seed=99)
    a = train(NetworkSpec(3, (5,)), X, y, cfg, mask_mode="per_step_dropout", p=0.8)
    b = train(NetworkSpec(3, (5,)), X, y, cfg, mask_mode="per_step_dropout", p=0.8)
    assert np.array_equal(a.flatten(), b.flatten())


def test_fixed_mask_leaves_dropped_unit_weights_at_init():
    rng = np.random.default_rng(8)
    spec = NetworkSpec(3, (4,))
    X, y = rng.normal(size=(64, 3)), rng.normal(size=64)
    cfg = TrainConfig(epochs=5, batch_size=16, learning_rate=0.05, seed=21)
    mask = Mask((np.array([1, 1, 0, 1]),), 0.9, MaskMode.FIXED_STRUCTURAL)
    trained = train(spec, X, y, cfg, mask=mask, mask_mode="fixed")
    init = init_network(spec, 21)
    assert np.array_equal(trained.weights[0][2], init.weights[0][2])
    assert trained.biases[0][2] == init.biases[0][2]
    assert trained.weights[1][0, 2] == init.weights[1][0, 2]
    assert not np.array_equal(trained.weights[0][0], init.weights[0][0])


def test_batch_larger_than_data_raises():
    with pytest.raises(ValueError, match="batch_size"):
        train(NetworkSpec(1, (2,)), np.zeros((3, 1)), np.zeros(3), TrainConfig(batch_size=4))


# ---------------------------------------------------------------------------
# jacobian


def test_jacobian_closed_form_on_one_two_one_net():
    w1 = np.array([[0.5], [1.5]])
    b1 = np.array([0.2, 0.1])
    w2 = np.array([[2.0, -3.0]])
    b2 = np.array([0.4])
    params = Parameters((w1, w2), (b1, b2))
    x = 1.3
    h = w1[:, 0] * x + b1
    expected = [w2[0, 0] * x, w2[0, 1] * x, w2[0, 0], w2[0, 1], h[0], h[1], 1.0]
    assert np.allclose(jacobian(params, [x]), expected, rtol=1e-14)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(9)
    for _ in range(20):
        spec, params = random_net(rng)
        x = rng.normal(size=spec.input_dim)
        fd = central_differences(
            lambda v: reference_forward(Parameters.unflatten(spec, v).weights,
                                        Parameters.unflatten(spec, v).biases, x),
            params.flatten())
        J = jacobian(params, x)
        assert np.max(np.abs(J - fd)) <= 1e-5 * max(np.max(np.abs(fd)), 1e-12)


def test_jacobian_zero_input_zero_bias_first_layer_is_zero():
    spec = NetworkSpec(3, (4,))
    params = init_network(spec, 1)
    J = jacobian(params, np.zeros(3))
    assert not J[:12].any()


def test_jacobian_rows_for_matrix_input():
    rng = np.random.default_rng(10)
    spec, params = random_net(rng)
    X = rng.normal(size=(5, spec.input_dim))
    J = jacobian(params, X)
    assert J.shape == (5, spec.n_params)
    assert np.array_equal(J[3], jacobian(params, X[3]))
