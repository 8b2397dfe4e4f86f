import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from gradcheck import check_module
from pmn.errors import DimensionError, NonFiniteError, UsageError
from pmn.nn import (Adam, BatchNorm1d, Conv1d, Deconv1d, Flatten, Linear, ReLU, Reshape, Sequential,
                    conv_out_len, deconv_out_len)
from pmn.tensor import Rng

F64 = np.float64


def _conv(k, s, p, cin=2, cout=3, seed=0, cls=Conv1d, **kw):
    return cls(cin, cout, k, s, p, rng=Rng(seed), dtype=F64, **kw)


def naive_conv(x, w, b, stride, pad):
    n, c, length = x.shape
    out_c, _, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    lout = (length + 2 * pad - k) // stride + 1
    y = np.zeros((n, out_c, lout))
    for i in range(n):
        for o in range(out_c):
            for t in range(lout):
                y[i, o, t] = b[o] + np.sum(w[o] * xp[i, :, t * stride:t * stride + k])
    return y


def naive_deconv(x, w, b, stride, pad):
    n, cin, length = x.shape
    _, out_c, k = w.shape
    full = np.zeros((n, out_c, (length - 1) * stride + k))
    for i in range(n):
        for c in range(cin):
            for t in range(length):
                full[i, :, t * stride:t * stride + k] += x[i, c, t] * w[c]
    lout = (length - 1) * stride - 2 * pad + k
    return full[:, :, pad:pad + lout] + b[None, :, None]


def test_identity_kernel():
    conv = _conv(1, 1, 0, cin=1, cout=1)
    conv.params["weight"][...] = 1.0
    np.testing.assert_array_equal(conv.forward(np.array([[[1.0, 2.0, 3.0]]])), [[[1.0, 2.0, 3.0]]])


def test_sum_kernel_matches_hand_result():
    conv = _conv(2, 1, 0, cin=1, cout=1)
    conv.params["weight"][...] = 1.0
    np.testing.assert_array_equal(conv.forward(np.array([[[1.0, 2.0, 3.0, 4.0]]]))[0, 0], [3, 5, 7])


@pytest.mark.parametrize("k,s,p", [(9, 2, 4), (11, 4, 5), (3, 1, 0), (4, 3, 2)])
def test_conv_matches_naive_loops(k, s, p):
    conv = _conv(k, s, p)
    conv.params["bias"][...] = [0.1, -0.2, 0.3]
    x = np.random.default_rng(1).normal(size=(2, 2, 23))
    np.testing.assert_allclose(conv.forward(x), naive_conv(x, conv.params["weight"], conv.params["bias"], s, p),
                               atol=1e-12)


@pytest.mark.parametrize("k,s,p", [(10, 4, 3), (8, 2, 3), (3, 1, 1), (5, 3, 0)])
def test_deconv_matches_naive_loops(k, s, p):
    dec = _conv(k, s, p, cls=Deconv1d)
    dec.params["bias"][...] = [0.1, -0.2, 0.3]
    x = np.random.default_rng(2).normal(size=(2, 2, 7))
    np.testing.assert_allclose(dec.forward(x), naive_deconv(x, dec.params["weight"], dec.params["bias"], s, p),
                               atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 5), st.integers(0, 5), st.integers(12, 40))
def test_output_length_formulas(k, s, p, length):
    conv = _conv(k, s, p)
    expect = (length + 2 * p - k) // s + 1
    assert conv_out_len(length, k, s, p) == expect
    if expect >= 1:
        assert conv.forward(np.zeros((1, 2, length))).shape == (1, 3, expect)
    dl = (length - 1) * s - 2 * p + k
    assert deconv_out_len(length, k, s, p) == dl
    if dl >= 1:
        assert _conv(k, s, p, cls=Deconv1d).forward(np.zeros((1, 2, length))).shape == (1, 3, dl)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 4), st.integers(0, 4), st.integers(16, 24), st.integers(0, 10_000))
def test_conv_deconv_adjoint(k, s, p, length, seed):
    # Deconv with the conv's weight (out,in,k) read as (in',out',k) is the conv's transpose,
    # exactly when it maps back to the conv's input length (no output padding needed).
    assume(p < k)
    rng = np.random.default_rng(seed)
    conv = Conv1d(2, 3, k, s, p, rng=Rng(seed), dtype=F64, bias=False)
    lout = conv.out_len(length)
    assume(lout >= 1 and deconv_out_len(lout, k, s, p) == length)
    dec = Deconv1d(3, 2, k, s, p, rng=Rng(seed), dtype=F64, bias=False)
    dec.params["weight"][...] = conv.params["weight"]
    x = rng.normal(size=(1, 2, length))
    y = rng.normal(size=(1, 3, lout))
    lhs = np.sum(conv.forward(x) * y)
    rhs = np.sum(x * dec.forward(y))
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


@pytest.mark.parametrize("draw", range(5))
@pytest.mark.parametrize("k,s,p", [(9, 2, 4), (11, 4, 5), (3, 1, 1)])
def test_conv_gradient(k, s, p, draw):
    x = np.random.default_rng(draw).normal(size=(2, 2, 17))
    assert check_module(_conv(k, s, p, seed=draw), x, seed=draw) < 1e-4


@pytest.mark.parametrize("draw", range(5))
@pytest.mark.parametrize("k,s,p", [(10, 4, 3), (8, 2, 3), (3, 1, 1)])
def test_deconv_gradient(k, s, p, draw):
    x = np.random.default_rng(draw).normal(size=(2, 2, 6))
    assert check_module(_conv(k, s, p, seed=draw, cls=Deconv1d), x, seed=draw) < 1e-5


@pytest.mark.parametrize("draw", range(5))
def test_linear_gradient(draw):
    lin = Linear(5, 4, rng=Rng(draw), dtype=F64)
    lin.params["bias"][...] = np.random.default_rng(draw).normal(size=4)
    x = np.random.default_rng(draw + 10).normal(size=(3, 5))
    assert check_module(lin, x, seed=draw) < 1e-5


@pytest.mark.parametrize("draw", range(5))
def test_relu_gradient(draw):
    x = np.random.default_rng(draw).normal(size=(4, 6))
    x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
    assert check_module(ReLU(), x, seed=draw) < 1e-5


def test_relu_backward_gates():
    relu = ReLU()
    relu.forward(np.array([-1.0, 2.0]))
    np.testing.assert_array_equal(relu.backward(np.array([5.0, 5.0])), [0.0, 5.0])


@pytest.mark.parametrize("draw", range(5))
@pytest.mark.parametrize("shape", [(8, 3), (6, 3, 5)])
@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_gradient(shape, train, draw):
    rng = np.random.default_rng(draw)
    bn = BatchNorm1d(3, dtype=F64)
    bn.params["gamma"][...] = rng.uniform(0.5, 2.0, 3)
    bn.params["beta"][...] = rng.normal(size=3)
    bn.buffers["running_mean"][...] = rng.normal(size=3)
    bn.buffers["running_var"][...] = rng.uniform(0.5, 2.0, 3)
    x = rng.normal(2.0, 3.0, size=shape)
    assert check_module(bn, x, train=train, seed=draw) < 1e-4


def test_batchnorm_normalizes_batch():
    x = np.random.default_rng(0).normal(5.0, 4.0, size=(16, 4, 9))
    out = BatchNorm1d(4, dtype=F64).forward(x, train=True)
    assert np.all(np.abs(out.mean(axis=(0, 2))) < 1e-6)
    assert np.all(np.abs(out.var(axis=(0, 2)) - 1) < 1e-5)


def test_batchnorm_running_stats_only_move_in_training():
    bn = BatchNorm1d(2, dtype=F64)
    x = np.random.default_rng(0).normal(3.0, 2.0, size=(10, 2))
    bn.forward(x, train=False)
    np.testing.assert_array_equal(bn.buffers["running_mean"], 0.0)
    bn.forward(x, train=True)
    np.testing.assert_allclose(bn.buffers["running_mean"], 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(bn.buffers["running_var"], 0.9 + 0.1 * x.var(axis=0, ddof=1))


def test_flatten_reshape_roundtrip():
    x = np.arange(24.0).reshape(2, 3, 4)
    seq = Sequential(Flatten(), Reshape(3, 4))
    np.testing.assert_array_equal(seq.forward(x), x)
    np.testing.assert_array_equal(seq.backward(x), x)


def test_shape_errors():
    with pytest.raises(DimensionError):
        _conv(3, 1, 0).forward(np.zeros((1, 5, 10)))
    with pytest.raises(DimensionError):
        Linear(3, 2, rng=Rng(0)).forward(np.zeros((2, 4)))


def test_backward_before_forward_is_usage_error():
    with pytest.raises(UsageError):
        Linear(3, 2, rng=Rng(0)).backward(np.zeros((1, 2)))


def test_encoder_shape_chain():
    rng = Rng(0)
    layers, c = [], 1
    for c_out, (k, s, p) in zip((8, 16, 32, 64, 128), ((9, 2, 4), (9, 2, 4), (11, 4, 5), (11, 4, 5), (11, 4, 5))):
        layers.append(Conv1d(c, c_out, k, s, p, rng=rng))
        c = c_out
    h = np.zeros((1, 1, 1024), np.float32)
    shapes = []
    for layer in layers:
        h = layer.forward(h)
        shapes.append(h.shape[1:])
    assert shapes == [(8, 512), (16, 256), (32, 64), (64, 16), (128, 4)]


# ------------------------------------------------------------------ Adam

def test_adam_zero_gradient_is_fixed_point():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(p)
    for _ in range(5):
        opt.step({"w": np.zeros(2)}, 0)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_is_lr():
    p = {"w": np.array([0.5])}
    Adam(p, lr=1e-3).step({"w": np.array([1.0])}, 0)
    assert abs((0.5 - p["w"][0]) - 1e-3) < 1e-9


def scalar_adam(grads, lr, decay, epochs, b1=0.9, b2=0.999, eps=1e-8):
    w, m, v = 0.0, 0.0, 0.0
    for t, (g, e) in enumerate(zip(grads, epochs), start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * decay**e * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return w


def test_adam_matches_scalar_recurrence():
    grads = [0.3, -1.2, 2.0, 0.1, -0.4, 0.9]
    epochs = [0, 0, 1, 1, 2, 2]
    p = {"w": np.array([0.0])}
    opt = Adam(p, lr=1e-2, decay=0.9)
    for g, e in zip(grads, epochs):
        opt.step({"w": np.array([g])}, e)
    assert abs(p["w"][0] - scalar_adam(grads, 1e-2, 0.9, epochs)) < 1e-12


def test_adam_lr_schedule_and_moment_shapes():
    p = {"a": np.zeros((2, 3)), "b": np.zeros(4)}
    opt = Adam(p)
    assert abs(opt.lr_at(10) - 0.001 * 0.99**10) < 1e-15
    assert abs(opt.lr_at(10) - 9.044e-4) < 1e-6
    assert {k: v.shape for k, v in opt.m.items()} == {"a": (2, 3), "b": (4,)}
    assert {k: v.shape for k, v in opt.v.items()} == {"a": (2, 3), "b": (4,)}


def test_adam_rejects_nan_gradient():
    p = {"w": np.zeros(2)}
    with pytest.raises(NonFiniteError, match="'w'"):
        Adam(p).step({"w": np.array([np.nan, 0.0])}, 0)
    np.testing.assert_array_equal(p["w"], 0.0)
