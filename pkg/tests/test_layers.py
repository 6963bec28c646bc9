import numpy as np
import pytest

from fdcheck import fd_grad, relative_error
from lpfiqa.errors import ShapeError
from lpfiqa.layers import (
    Dropout,
    Identity,
    LayerNorm,
    LayerStack,
    Linear,
    ReLU,
    Sigmoid,
    Softmax,
)


def rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# linear


def test_linear_init_distribution():
    layer = Linear(64, 32, rng())
    bound = np.sqrt(6.0 / (64 + 32))
    assert layer.weight.shape == (32, 64)
    assert np.abs(layer.weight).max() <= bound
    assert layer.weight.std() > 0.1 * bound
    np.testing.assert_array_equal(layer.bias, np.zeros(32))


def test_linear_forward_matches_manual():
    layer = Linear(5, 3, rng(1))
    x = rng(2).normal(size=(4, 5))
    layer.bias[:] = rng(3).normal(size=3)
    np.testing.assert_allclose(
        layer.forward(x), x @ layer.weight.T + layer.bias, rtol=1e-12
    )


def test_linear_backward_grads_match_fd():
    layer = Linear(6, 4, rng(4))
    x = rng(5).normal(size=(7, 6))
    route = rng(6).normal(size=(7, 4))

    out = layer.forward(x)
    grad_x = layer.backward(route)

    def loss_wrt_weight(w):
        return float(((x @ w.T + layer.bias) * route).sum())

    def loss_wrt_bias(b):
        return float(((x @ layer.weight.T + b) * route).sum())

    def loss_wrt_x(xv):
        return float(((xv @ layer.weight.T + layer.bias) * route).sum())

    assert relative_error(layer.grad_weight, fd_grad(loss_wrt_weight, layer.weight)) < 1e-7
    assert relative_error(layer.grad_bias, fd_grad(loss_wrt_bias, layer.bias)) < 1e-7
    assert relative_error(grad_x, fd_grad(loss_wrt_x, x)) < 1e-7
    assert out.shape == (7, 4)


def test_linear_grads_accumulate():
    layer = Linear(3, 2, rng(7))
    x = rng(8).normal(size=(4, 3))
    g = rng(9).normal(size=(4, 2))
    layer.forward(x)
    layer.backward(g)
    once = layer.grad_weight.copy()
    layer.forward(x)
    layer.backward(g)
    np.testing.assert_allclose(layer.grad_weight, 2.0 * once, rtol=1e-12)


def test_linear_shape_validation():
    layer = Linear(3, 2, rng(10))
    with pytest.raises(ShapeError):
        layer.forward(np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        Linear(0, 2, rng(11))


# ---------------------------------------------------------------------------
# relu


def test_relu_forward_and_mask():
    layer = ReLU()
    x = np.array([[-1.0, 0.0, 2.5]])
    np.testing.assert_array_equal(layer.forward(x), [[0.0, 0.0, 2.5]])
    np.testing.assert_array_equal(layer.backward(np.ones((1, 3))), [[0.0, 0.0, 1.0]])


def test_relu_backward_matches_fd():
    x = rng(12).normal(size=(5, 8))
    route = rng(13).normal(size=(5, 8))
    layer = ReLU()
    layer.forward(x)
    got = layer.backward(route)
    want = fd_grad(lambda xv: float((np.maximum(xv, 0.0) * route).sum()), x)
    assert relative_error(got, want) < 1e-7


# ---------------------------------------------------------------------------
# layer norm


def test_layernorm_forward_standardises_rows():
    layer = LayerNorm(16)
    x = rng(14).normal(loc=3.0, scale=2.0, size=(6, 16))
    out = layer.forward(x)
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=1), 1.0, rtol=1e-4)


def test_layernorm_shift_invariance():
    # Adding a per-row constant leaves the centred values untouched.
    layer = LayerNorm(12)
    x = rng(15).normal(size=(4, 12))
    base = layer.forward(x)
    shifted = layer.forward(x + 37.5)
    np.testing.assert_allclose(shifted, base, atol=1e-9)


def test_layernorm_backward_matches_fd():
    dim = 9
    layer = LayerNorm(dim, epsilon=1e-9)
    layer.gain[:] = rng(16).normal(size=dim)
    layer.shift[:] = rng(17).normal(size=dim)
    x = rng(18).normal(size=(5, dim))
    route = rng(19).normal(size=(5, dim))

    def apply(xv, gain, shift):
        mu = xv.mean(axis=1, keepdims=True)
        var = xv.var(axis=1, keepdims=True)
        return gain * (xv - mu) / np.sqrt(var + layer.epsilon) + shift

    layer.forward(x)
    grad_x = layer.backward(route)

    want_x = fd_grad(lambda xv: float((apply(xv, layer.gain, layer.shift) * route).sum()), x)
    want_gain = fd_grad(lambda g: float((apply(x, g, layer.shift) * route).sum()), layer.gain)
    want_shift = fd_grad(lambda s: float((apply(x, layer.gain, s) * route).sum()), layer.shift)
    assert relative_error(grad_x, want_x) < 1e-6
    assert relative_error(layer.grad_gain, want_gain) < 1e-7
    assert relative_error(layer.grad_shift, want_shift) < 1e-7


def test_layernorm_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        LayerNorm(4, epsilon=0.0)


# ---------------------------------------------------------------------------
# dropout


def test_dropout_train_mode_scales_survivors():
    layer = Dropout(0.25, rng(20))
    layer.set_mode(True)
    x = rng(21).normal(size=(200, 50))
    out = layer.forward(x)
    dropped = out == 0.0
    kept = ~dropped
    np.testing.assert_allclose(out[kept], x[kept] / 0.75, rtol=1e-12)
    assert 0.15 < dropped.mean() < 0.35


def test_dropout_eval_mode_is_identity():
    layer = Dropout(0.5, rng(22))
    layer.set_mode(False)
    x = rng(23).normal(size=(4, 6))
    np.testing.assert_array_equal(layer.forward(x), x)


def test_dropout_zero_rate_keeps_everything():
    layer = Dropout(0.0, rng(24))
    layer.set_mode(True)
    x = rng(25).normal(size=(3, 5))
    np.testing.assert_array_equal(layer.forward(x), x)


def test_dropout_backward_uses_same_mask():
    layer = Dropout(0.4, rng(26))
    layer.set_mode(True)
    x = rng(27).normal(size=(10, 10))
    out = layer.forward(x)
    grad = layer.backward(np.ones_like(x))
    np.testing.assert_array_equal(grad == 0.0, out == 0.0)
    np.testing.assert_allclose(grad[grad != 0.0], 1.0 / 0.6, rtol=1e-12)


def test_dropout_rng_state_roundtrip_reproduces_masks():
    layer = Dropout(0.5, rng(28))
    layer.set_mode(True)
    saved = layer.rng_state
    x = np.ones((6, 6))
    first = layer.forward(x)
    layer.rng_state = saved
    second = layer.forward(x)
    np.testing.assert_array_equal(first, second)


# ---------------------------------------------------------------------------
# activations


def test_softmax_rows_sum_to_one():
    layer = Softmax()
    out = layer.forward(rng(29).normal(size=(8, 4)))
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert (out > 0.0).all()


def test_softmax_is_shift_stable():
    layer = Softmax()
    logits = np.array([[1e4, 1e4 - 1.0, 0.0]])
    out = layer.forward(logits)
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out.sum(), 1.0, atol=1e-12)


def test_softmax_backward_matches_fd():
    x = rng(30).normal(size=(5, 4))
    route = rng(31).normal(size=(5, 4))
    layer = Softmax()
    layer.forward(x)
    got = layer.backward(route)

    def loss(xv):
        e = np.exp(xv - xv.max(axis=1, keepdims=True))
        return float((e / e.sum(axis=1, keepdims=True) * route).sum())

    assert relative_error(got, fd_grad(loss, x)) < 1e-6


def test_sigmoid_forward_values_and_symmetry():
    layer = Sigmoid()
    x = rng(32).normal(size=(4, 7)) * 3.0
    out = layer.forward(x)
    np.testing.assert_allclose(out, 1.0 / (1.0 + np.exp(-x)), rtol=1e-12)
    np.testing.assert_allclose(out, 1.0 - Sigmoid().forward(-x), atol=1e-12)


def test_sigmoid_extreme_inputs_stay_finite():
    out = Sigmoid().forward(np.array([[-750.0, 750.0]]))
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out, [[0.0, 1.0]], atol=1e-300)


def test_sigmoid_backward_matches_fd():
    x = rng(33).normal(size=(3, 5))
    route = rng(34).normal(size=(3, 5))
    layer = Sigmoid()
    layer.forward(x)
    got = layer.backward(route)
    want = fd_grad(lambda xv: float((1.0 / (1.0 + np.exp(-xv)) * route).sum()), x)
    assert relative_error(got, want) < 1e-7


def test_identity_passthrough():
    x = rng(35).normal(size=(2, 3))
    layer = Identity()
    assert layer.forward(x) is x
    g = np.ones_like(x)
    assert layer.backward(g) is g


# ---------------------------------------------------------------------------
# stacks


def make_stack(seed=36):
    r = np.random.default_rng(seed)
    return LayerStack(
        "head",
        [
            Linear(6, 8, r),
            ReLU(),
            LayerNorm(8),
            Dropout(0.0, r),
            Linear(8, 2, r),
        ],
    )


def test_stack_forward_composes_layers():
    stack = make_stack()
    stack.set_mode(False)
    x = rng(37).normal(size=(4, 6))
    out = x
    for layer in stack.layers:
        out = layer.forward(out)
    np.testing.assert_array_equal(stack.forward(x), out)


def test_stack_parameter_names_carry_position():
    names = [name for name, _, _ in make_stack().parameters()]
    assert names == ["head.0.weight", "head.0.bias", "head.2.gain", "head.2.shift",
                     "head.4.weight", "head.4.bias"]


def test_stack_end_to_end_gradient_matches_fd():
    stack = make_stack(38)
    stack.set_mode(True)
    x = rng(39).normal(size=(5, 6))
    route = rng(40).normal(size=(5, 2))
    stack.forward(x)
    stack.zero_grad()
    grad_x = stack.backward(route)

    def loss(xv):
        out = xv
        for layer in stack.layers:
            out = layer.forward(out)
        return float((out * route).sum())

    want = fd_grad(loss, x)
    # fd re-runs forward, restore the cached activations for safety
    stack.forward(x)
    assert relative_error(grad_x, want) < 1e-6


def test_stack_backward_from_skips_terminal_layers():
    stack = LayerStack("s", [Linear(3, 4, rng(41)), Softmax()])
    x = rng(42).normal(size=(2, 3))
    stack.forward(x)
    route = rng(43).normal(size=(2, 4))
    # index -1 starts behind the softmax, i.e. gradient w.r.t. logits
    got = stack.backward_from(route, -1)
    lin = stack.layers[0]
    np.testing.assert_allclose(got, route @ lin.weight, rtol=1e-12)


def test_stack_zero_grad_resets_accumulators():
    stack = make_stack(44)
    x = rng(45).normal(size=(3, 6))
    stack.forward(x)
    stack.backward(np.ones((3, 2)))
    stack.zero_grad()
    for _, _, grad in stack.parameters():
        np.testing.assert_array_equal(grad, np.zeros_like(grad))


def test_stack_dropout_layers_listed():
    stack = make_stack(46)
    found = stack.dropout_layers()
    assert len(found) == 1
    assert isinstance(found[0], Dropout)
