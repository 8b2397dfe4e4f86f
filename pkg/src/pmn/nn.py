"""Layers with hand-written backward passes, plus Adam.

Every layer works on batch-first arrays: ``(N, C, L)`` for the convolutional
stages and ``(N, F)`` for dense stages. ``forward`` caches what ``backward``
needs; ``backward`` takes the upstream gradient, accumulates parameter
gradients into ``grads`` and returns the gradient w.r.t. the layer input.
"""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NonFiniteError, UsageError
from .tensor import Rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def conv_out_len(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def deconv_out_len(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length - 1) * stride - 2 * padding + kernel


def _uniform_init(rng: Rng, shape, fan_in: float, dtype) -> np.ndarray:
    # U(-1/sqrt(fan_in), 1/sqrt(fan_in)); the He bound (sqrt(6/fan_in)) makes the
    # BN-free decoder output ~6x too loud at init and swamps the classifier.
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Minimal container for parameters, their gradients and buffers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def children(self) -> list[tuple[str, "Module"]]:
        return []

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, p in self.params.items():
            yield prefix + name, p
        for cname, child in self.children():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_gradients(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self.params:
            yield prefix + name, self.grads[name]
        for cname, child in self.children():
            yield from child.named_gradients(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self.buffers.items():
            yield prefix + name, b
        for cname, child in self.children():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def zero_grad(self) -> None:
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)
        for _, child in self.children():
            child.zero_grad()

    def _need_cache(self):
        if self._cache is None:
            raise UsageError(f"{type(self).__name__}.backward called without a preceding forward")
        return self._cache

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    __call__ = forward


class Conv1d(Module):
    """1-D convolution, weight shape ``(out, in, kernel)``.

    ``bias=False`` is used when a BatchNorm follows, since its mean
    subtraction cancels any bias. ``input_grad=False`` skips the input
    gradient for a network's first layer.
    """

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, *, rng: Rng,
                 dtype=np.float32, bias=True, input_grad=True):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.input_grad = input_grad
        self.params["weight"] = _uniform_init(rng, (out_channels, in_channels, kernel), in_channels * kernel, dtype)
        if bias:
            self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self.zero_grad()

    def out_len(self, length: int) -> int:
        return conv_out_len(length, self.kernel, self.stride, self.padding)

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise DimensionError(f"Conv1d expects (N, {self.in_channels}, L), got {x.shape}")
        n, c, length = x.shape
        k, s, p = self.kernel, self.stride, self.padding
        lout = self.out_len(length)
        if lout < 1:
            raise DimensionError(f"input length {length} too short for kernel {k}")
        xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
        win = sliding_window_view(xp, k, axis=2)[:, :, ::s][:, :, :lout]
        cols = win.transpose(0, 2, 1, 3).reshape(n * lout, c * k)
        w = self.params["weight"].reshape(self.out_channels, c * k)
        out = cols @ w.T
        if "bias" in self.params:
            out += self.params["bias"]
        self._cache = (cols, x.shape, lout)
        return out.reshape(n, lout, self.out_channels).transpose(0, 2, 1)

    def backward(self, grad):
        cols, (n, c, length), lout = self._need_cache()
        k, s, p = self.kernel, self.stride, self.padding
        g = grad.transpose(0, 2, 1).reshape(n * lout, self.out_channels)
        w = self.params["weight"].reshape(self.out_channels, c * k)
        self.grads["weight"] += (g.T @ cols).reshape(self.params["weight"].shape)
        if "bias" in self.params:
            self.grads["bias"] += g.sum(axis=0)
        if not self.input_grad:
            return None
        dcols = np.ascontiguousarray((g @ w).reshape(n, lout, c, k).transpose(0, 2, 3, 1))
        dxp = np.zeros((n, c, length + 2 * p), dtype=grad.dtype)
        span = s * (lout - 1) + 1
        for j in range(k):
            dxp[:, :, j:j + span:s] += dcols[:, :, j, :]
        return dxp[:, :, p:p + length]


class Deconv1d(Module):
    """Transposed 1-D convolution, weight shape ``(in, out, kernel)``.

    Forward is the adjoint of :class:`Conv1d` with the same geometry.
    """

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, *, rng: Rng,
                 dtype=np.float32, bias=True):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = in_channels * max(1.0, kernel / stride)
        self.params["weight"] = _uniform_init(rng, (in_channels, out_channels, kernel), fan_in, dtype)
        if bias:
            self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self.zero_grad()

    def out_len(self, length: int) -> int:
        return deconv_out_len(length, self.kernel, self.stride, self.padding)

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise DimensionError(f"Deconv1d expects (N, {self.in_channels}, L), got {x.shape}")
        n, c, length = x.shape
        k, s, p = self.kernel, self.stride, self.padding
        o = self.out_channels
        lout = self.out_len(length)
        if lout < 1:
            raise DimensionError(f"padding {p} leaves no output for input length {length}")
        xt = x.transpose(0, 2, 1).reshape(n * length, c)
        y = (xt @ self.params["weight"].reshape(c, o * k)).reshape(n, length, o, k)
        y = np.ascontiguousarray(y.transpose(0, 2, 3, 1))
        full = np.zeros((n, o, (length - 1) * s + k), dtype=y.dtype)
        span = s * (length - 1) + 1
        for j in range(k):
            full[:, :, j:j + span:s] += y[:, :, j, :]
        self._cache = (xt, x.shape)
        out = full[:, :, p:p + lout]
        if "bias" in self.params:
            out = out + self.params["bias"][:, None]
        return out

    def backward(self, grad):
        xt, (n, c, length) = self._need_cache()
        k, s, p = self.kernel, self.stride, self.padding
        o = self.out_channels
        if "bias" in self.params:
            self.grads["bias"] += grad.sum(axis=(0, 2))
        gfull = np.pad(grad, ((0, 0), (0, 0), (p, p)))
        win = sliding_window_view(gfull, k, axis=2)[:, :, ::s][:, :, :length]
        dy = win.transpose(0, 2, 1, 3).reshape(n * length, o * k)
        w = self.params["weight"].reshape(c, o * k)
        self.grads["weight"] += (xt.T @ dy).reshape(self.params["weight"].shape)
        return (dy @ w.T).reshape(n, length, c).transpose(0, 2, 1)


class BatchNorm1d(Module):
    """Batch normalization over ``(N, C)`` or ``(N, C, L)`` inputs."""

    def __init__(self, channels, *, eps=BN_EPS, momentum=BN_MOMENTUM, dtype=np.float32):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.zero_grad()

    def _shape(self, x):
        if x.ndim not in (2, 3) or x.shape[1] != self.channels:
            raise DimensionError(f"BatchNorm1d expects (N, {self.channels}[, L]), got {x.shape}")
        axes = (0, 2) if x.ndim == 3 else (0,)
        bshape = (1, self.channels, 1) if x.ndim == 3 else (1, self.channels)
        return axes, bshape

    def forward(self, x, train=False):
        axes, bshape = self._shape(x)
        gamma = self.params["gamma"].reshape(bshape)
        beta = self.params["beta"].reshape(bshape)
        if train:
            count = x.size // self.channels
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            unbiased = var * count / max(count - 1, 1)
            rm[...] = (1 - self.momentum) * rm + self.momentum * mean
            rv[...] = (1 - self.momentum) * rv + self.momentum * unbiased
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
        self._cache = (xhat, inv_std, train, axes, bshape)
        return gamma * xhat + beta

    def backward(self, grad):
        xhat, inv_std, train, axes, bshape = self._need_cache()
        self.grads["gamma"] += (grad * xhat).sum(axis=axes)
        self.grads["beta"] += grad.sum(axis=axes)
        dxhat = grad * self.params["gamma"].reshape(bshape)
        inv = inv_std.reshape(bshape)
        if not train:
            return dxhat * inv
        m = grad.size // self.channels
        s1 = dxhat.sum(axis=axes, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
        return inv / m * (m * dxhat - s1 - xhat * s2)


class Linear(Module):
    """Dense layer ``y = x W^T + b`` with ``W`` of shape ``(out, in)``."""

    def __init__(self, in_features, out_features, *, rng: Rng, dtype=np.float32):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = _uniform_init(rng, (out_features, in_features), in_features, dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(f"Linear expects (N, {self.in_features}), got {x.shape}")
        self._cache = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        x = self._need_cache()
        self.grads["weight"] += grad.T @ x
        self.grads["bias"] += grad.sum(axis=0)
        return grad @ self.params["weight"]


class ReLU(Module):
    def forward(self, x, train=False):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, grad):
        return grad * self._need_cache()


class Flatten(Module):
    def forward(self, x, train=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._need_cache())


class Reshape(Module):
    def __init__(self, *shape: int):
        super().__init__()
        self.shape = shape

    def forward(self, x, train=False):
        if x[0].size != math.prod(self.shape):
            raise DimensionError(f"cannot reshape {x.shape[1:]} to {self.shape}")
        self._cache = x.shape
        return x.reshape(x.shape[0], *self.shape)

    def backward(self, grad):
        return grad.reshape(self._need_cache())


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return [(str(i), layer) for i, layer in enumerate(self.layers)]

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
            if grad is None:
                break
        return grad

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]


class Adam:
    """Adam with bias correction and an exponential per-epoch lr decay.

    Parameters are updated in place. The effective learning rate in epoch
    ``e`` (zero-based) is ``lr * decay**e``.
    """

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, decay=0.99, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.decay = lr, decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay**epoch

    def step(self, grads: dict[str, np.ndarray], epoch: int) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        lr = self.lr_at(epoch)
        c1 = 1 - self.beta1**t
        c2 = 1 - self.beta2**t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
