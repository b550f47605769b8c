"""Layer implementations. Image tensors are channels-last: (N, H, W, C)."""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = "layer"
    param_names = ()

    def __init__(self):
        self.params = {}

    def output_shape(self, in_shape):
        return in_shape

    def init(self, rng, in_shape):
        pass

    def forward(self, x):
        """Return (output, cache)."""
        raise NotImplementedError

    def backward(self, grad, cache):
        """Return (input gradient, {param name: gradient})."""
        raise NotImplementedError

    def describe(self):
        return {"kind": self.kind}


class Dense(Layer):
    kind = "dense"
    param_names = ("W", "b")

    def __init__(self, n_in, n_out):
        super().__init__()
        self.n_in = int(n_in)
        self.n_out = int(n_out)

    def output_shape(self, in_shape):
        if math.prod(in_shape) != self.n_in:
            raise ShapeError(f"dense layer expects {self.n_in} inputs, got shape {in_shape}")
        return (self.n_out,)

    def init(self, rng, in_shape):
        self.params = {
            "W": glorot_uniform(rng, (self.n_in, self.n_out), self.n_in, self.n_out),
            "b": np.zeros(self.n_out),
        }

    def forward(self, x):
        flat = x.reshape(len(x), -1)
        return flat @ self.params["W"] + self.params["b"], (flat, x.shape)

    def backward(self, grad, cache):
        flat, shape = cache
        grads = {"W": flat.T @ grad, "b": grad.sum(axis=0)}
        return (grad @ self.params["W"].T).reshape(shape), grads

    def describe(self):
        return {"kind": self.kind, "in": self.n_in, "out": self.n_out}


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero 'same' padding."""

    kind = "conv3x3"
    param_names = ("W", "b")

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.in_ch = int(in_ch)
        self.out_ch = int(out_ch)

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[2] != self.in_ch:
            raise ShapeError(
                f"conv3x3 expects (H, W, {self.in_ch}) input, got shape {in_shape}"
            )
        return (in_shape[0], in_shape[1], self.out_ch)

    def init(self, rng, in_shape):
        fan_in = 9 * self.in_ch
        fan_out = 9 * self.out_ch
        self.params = {
            "W": glorot_uniform(rng, (3, 3, self.in_ch, self.out_ch), fan_in, fan_out),
            "b": np.zeros(self.out_ch),
        }

    def forward(self, x):
        n, h, w, c = x.shape
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        # (N, H, W, C, 3, 3) -> (N, H, W, 3, 3, C)
        win = sliding_window_view(padded, (3, 3), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
        cols = win.reshape(n * h * w, 9 * c)
        out = cols @ self.params["W"].reshape(9 * c, self.out_ch) + self.params["b"]
        return out.reshape(n, h, w, self.out_ch), (cols, x.shape)

    def backward(self, grad, cache):
        cols, (n, h, w, c) = cache
        g = grad.reshape(n * h * w, self.out_ch)
        grads = {
            "W": (cols.T @ g).reshape(3, 3, c, self.out_ch),
            "b": g.sum(axis=0),
        }
        dcols = (g @ self.params["W"].reshape(9 * c, self.out_ch).T).reshape(n, h, w, 3, 3, c)
        dpad = np.zeros((n, h + 2, w + 2, c))
        for i in range(3):
            for j in range(3):
                dpad[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
        return dpad[:, 1:-1, 1:-1, :], grads

    def describe(self):
        return {"kind": self.kind, "in_ch": self.in_ch, "out_ch": self.out_ch}


class MaxPool2x2(Layer):
    kind = "maxpool2x2"

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] % 2 or in_shape[1] % 2:
            raise ShapeError(f"maxpool2x2 needs (H, W, C) input with even H, W; got {in_shape}")
        return (in_shape[0] // 2, in_shape[1] // 2, in_shape[2])

    def forward(self, x):
        n, h, w, c = x.shape
        blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
        blocks = blocks.reshape(n, h // 2, w // 2, c, 4)
        # gradient routes to the first maximal element only
        idx = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return out, (idx, x.shape)

    def backward(self, grad, cache):
        idx, (n, h, w, c) = cache
        blocks = np.zeros((n, h // 2, w // 2, c, 4))
        np.put_along_axis(blocks, idx[..., None], grad[..., None], axis=-1)
        blocks = blocks.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        return blocks.reshape(n, h, w, c), {}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, grad, cache):
        return grad * cache, {}


def layer_from_description(desc):
    kind = desc["kind"]
    if kind == "dense":
        return Dense(desc["in"], desc["out"])
    if kind == "conv3x3":
        return Conv3x3(desc["in_ch"], desc["out_ch"])
    if kind == "maxpool2x2":
        return MaxPool2x2()
    if kind == "relu":
        return ReLU()
    raise ValueError(f"unknown layer kind {kind!r}")
