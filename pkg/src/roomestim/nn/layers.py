"""Layers with explicit forward and backward passes.

Layers are stateless: parameters live in a dict owned by the caller and
``forward`` returns a cache consumed by ``backward``, so a forward pass
without gradients is safe to run concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _kernels


@dataclass
class Context:
    training: bool = False
    rng: np.random.Generator | None = None


def _uniform(rng, shape, fan_in, gain=6.0, dtype=np.float32):
    lim = np.sqrt(gain / fan_in)
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


class Layer:
    def init(self, rng, dtype=np.float32):
        return {}

    def forward(self, p, x, ctx):
        raise NotImplementedError

    def backward(self, p, cache, gy):
        raise NotImplementedError


class DepthwiseConv(Layer):
    """Per-channel 'same' convolution along frequency on ``(N, C, F)``, no bias."""

    def __init__(self, channels, kernel_size=11, dilation=1):
        if dilation < 1 or kernel_size % 2 == 0:
            raise ValueError("need an odd kernel and dilation >= 1")
        self.channels, self.kernel_size, self.dilation = channels, kernel_size, dilation

    def init(self, rng, dtype=np.float32):
        return {"w": _uniform(rng, (self.channels, self.kernel_size), self.kernel_size, dtype=dtype)}

    def forward(self, p, x, ctx):
        return _kernels.depthwise_forward(x, p["w"], self.dilation), x

    def backward(self, p, x, gy):
        gx, gw = _kernels.depthwise_backward(x, p["w"], gy, self.dilation)
        return gx, {"w": gw}


class Pointwise(Layer):
    """Channel mixing ``(N, Cin, F) -> (N, Cout, F)``, no bias."""

    def __init__(self, c_in, c_out):
        self.c_in, self.c_out = c_in, c_out

    def init(self, rng, dtype=np.float32):
        return {"w": _uniform(rng, (self.c_out, self.c_in), self.c_in, dtype=dtype)}

    def forward(self, p, x, ctx):
        return np.matmul(p["w"], x), x

    def backward(self, p, x, gy):
        gw = np.tensordot(gy, x, axes=([0, 2], [0, 2]))
        return np.matmul(p["w"].T, gy), {"w": gw.astype(x.dtype)}


class ReLU(Layer):
    def forward(self, p, x, ctx):
        y = np.maximum(x, 0)
        return y, y > 0

    def backward(self, p, mask, gy):
        return gy * mask, {}


class LayerNorm(Layer):
    """Normalization over every axis but the first, with elementwise gain and bias."""

    def __init__(self, shape, eps=1e-12):
        self.shape, self.eps = tuple(shape), eps

    def init(self, rng, dtype=np.float32):
        return {"g": np.ones(self.shape, dtype), "b": np.zeros(self.shape, dtype)}

    def forward(self, p, x, ctx):
        axes = tuple(range(1, x.ndim))
        mu = x.mean(axis=axes, keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + self.eps)
        xhat = xc * inv
        return xhat * p["g"] + p["b"], (xhat, inv)

    def backward(self, p, cache, gy):
        xhat, inv = cache
        axes = tuple(range(1, gy.ndim))
        gxhat = gy * p["g"]
        gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        return gx, {"g": (gy * xhat).sum(axis=0), "b": gy.sum(axis=0)}


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    def __init__(self, rate):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate

    def forward(self, p, x, ctx):
        if not ctx.training or self.rate == 0:
            return x, None
        if ctx.rng is None:
            raise ValueError("training mode needs an rng for dropout")
        keep = ctx.rng.random(x.shape, dtype=np.float32) >= self.rate
        mask = keep.astype(x.dtype) / x.dtype.type(1 - self.rate)
        return x * mask, mask

    def backward(self, p, mask, gy):
        return (gy if mask is None else gy * mask), {}


def pooling_matrix(n_in, n_out, dtype=np.float64):
    """Adaptive average pooling as an ``(n_in, n_out)`` matrix."""
    if not 1 <= n_out <= n_in:
        raise ValueError("pool size must be between 1 and the input length")
    a = np.zeros((n_in, n_out), dtype)
    for j in range(n_out):
        lo = (j * n_in) // n_out
        hi = -((-(j + 1) * n_in) // n_out)
        a[lo:hi, j] = 1.0 / (hi - lo)
    return a


class FreqPool(Layer):
    """Adaptive average pooling along frequency, flattened: ``(N, C, F) -> (N, C*P)``."""

    def __init__(self, n_in, n_out):
        self.n_in, self.n_out = n_in, n_out
        self._a = {}

    def matrix(self, dtype):
        key = np.dtype(dtype).str
        if key not in self._a:
            self._a[key] = pooling_matrix(self.n_in, self.n_out, dtype)
        return self._a[key]

    def forward(self, p, x, ctx):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"expected {self.n_in} frequency bins, got {x.shape[-1]}")
        y = np.matmul(x, self.matrix(x.dtype))
        return y.reshape(x.shape[0], -1), x.shape

    def backward(self, p, shape, gy):
        gy = gy.reshape(shape[0], shape[1], self.n_out)
        return np.matmul(gy, self.matrix(gy.dtype).T), {}


class Dense(Layer):
    def __init__(self, n_in, n_out, init_gain=6.0):
        self.n_in, self.n_out, self.init_gain = n_in, n_out, init_gain

    def init(self, rng, dtype=np.float32):
        return {"w": _uniform(rng, (self.n_in, self.n_out), self.n_in, self.init_gain, dtype),
                "b": np.zeros(self.n_out, dtype)}

    def forward(self, p, x, ctx):
        return x @ p["w"] + p["b"], x

    def backward(self, p, x, gy):
        return gy @ p["w"].T, {"w": x.T @ gy, "b": gy.sum(axis=0)}


class Sequential(Layer):
    """Named chain of layers; parameters are flattened as ``<name>.<param>``."""

    def __init__(self, layers):
        self.layers = list(layers)  # [(name, layer)]

    def init(self, rng, dtype=np.float32):
        out = {}
        for name, layer in self.layers:
            for k, v in layer.init(rng, dtype).items():
                out[f"{name}.{k}"] = v
        return out

    @staticmethod
    def _sub(p, name):
        pre = name + "."
        return {k[len(pre):]: v for k, v in p.items() if k.startswith(pre)}

    def forward(self, p, x, ctx):
        caches = []
        for name, layer in self.layers:
            x, c = layer.forward(self._sub(p, name), x, ctx)
            caches.append(c)
        return x, caches

    def backward(self, p, caches, gy):
        grads = {}
        for (name, layer), c in zip(reversed(self.layers), reversed(caches)):
            gy, g = layer.backward(self._sub(p, name), c, gy)
            for k, v in g.items():
                grads[f"{name}.{k}"] = v
        return gy, grads


def conv_block(c_in, channels, n_freq, kernel_size, dilation, dropout):
    """Depthwise, ReLU, pointwise, ReLU, layer norm over (channel, frequency), dropout."""
    return Sequential([
        ("dw", DepthwiseConv(c_in, kernel_size, dilation)),
        ("relu1", ReLU()),
        ("pw", Pointwise(c_in, channels)),
        ("relu2", ReLU()),
        ("ln", LayerNorm((channels, n_freq))),
        ("drop", Dropout(dropout)),
    ])
