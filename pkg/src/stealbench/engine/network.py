"""Feedforward classifier with a softmax (optionally reverse-sigmoid) head."""

import io
import json
import math
from dataclasses import dataclass

import numpy as np

from ..errors import NumericalError, ShapeError
from . import losses
from .functional import (
    log_softmax,
    reverse_sigmoid_transform,
    reverse_sigmoid_transform_backward,
    softmax,
)
from .layers import Conv3x3, Dense, MaxPool2x2, ReLU, layer_from_description


@dataclass(frozen=True)
class OutputMode:
    kind: str = "softmax"
    beta: float = 0.0
    gamma: float = 1.0
    clip_eps: float = 1e-7

    def __post_init__(self):
        if self.kind not in ("softmax", "softmax_then_reverse_sigmoid"):
            raise ValueError(f"unknown output mode {self.kind!r}")
        if self.kind == "softmax_then_reverse_sigmoid" and not (self.beta > 0 and self.gamma > 0):
            raise ValueError("reverse sigmoid head needs beta > 0 and gamma > 0")

    @classmethod
    def reverse_sigmoid(cls, beta, gamma, clip_eps=1e-7):
        return cls("softmax_then_reverse_sigmoid", float(beta), float(gamma), float(clip_eps))

    def to_dict(self):
        return {"kind": self.kind, "beta": self.beta, "gamma": self.gamma, "clip_eps": self.clip_eps}


SOFTMAX = OutputMode()


class Network:
    """An ordered stack of layers followed by a normalizing output head.

    Inputs are batches shaped ``(N, *input_shape)``. Dense layers flatten
    whatever they receive, so image inputs feed dense stacks directly.
    """

    def __init__(self, input_shape, layers, output_mode=SOFTMAX, seed=0):
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layers = list(layers)
        self.output_mode = output_mode
        self.seed = int(seed)
        shape = self.input_shape
        rng = np.random.default_rng(self.seed)
        for layer in self.layers:
            out = layer.output_shape(shape)
            layer.init(rng, shape)
            shape = out
        if len(shape) != 1 or shape[0] < 2:
            raise ShapeError(f"network must end in a vector of >= 2 logits, got {shape}")
        self.num_classes = shape[0]

    # construction helpers -------------------------------------------------

    @classmethod
    def dense(cls, n_in, hidden, n_out, output_mode=SOFTMAX, seed=0, input_shape=None):
        layers = []
        width = n_in
        for h in hidden:
            layers += [Dense(width, h), ReLU()]
            width = h
        layers.append(Dense(width, n_out))
        return cls(input_shape or (n_in,), layers, output_mode, seed)

    @classmethod
    def simple_convnet(cls, input_shape, n_out, width_scale=0.5, output_mode=SOFTMAX, seed=0):
        """The "Simple" convnet: conv, conv, pool, conv, conv, pool, dense, dense.

        ``width_scale=1.0`` gives 64/64/128/128 filters and two 256-unit dense
        layers; the default halves every width.
        """
        c1, c2, d = (max(1, round(v * width_scale)) for v in (64, 128, 256))
        h, w, c = input_shape
        layers = [
            Conv3x3(c, c1), ReLU(), Conv3x3(c1, c1), ReLU(), MaxPool2x2(),
            Conv3x3(c1, c2), ReLU(), Conv3x3(c2, c2), ReLU(), MaxPool2x2(),
            Dense((h // 4) * (w // 4) * c2, d), ReLU(), Dense(d, d), ReLU(),
            Dense(d, n_out),
        ]
        return cls(input_shape, layers, output_mode, seed)

    def copy(self):
        clone = object.__new__(Network)
        clone.input_shape = self.input_shape
        clone.output_mode = self.output_mode
        clone.seed = self.seed
        clone.num_classes = self.num_classes
        clone.layers = []
        for layer in self.layers:
            new = layer_from_description(layer.describe())
            new.params = {k: v.copy() for k, v in layer.params.items()}
            clone.layers.append(new)
        return clone

    def with_output_mode(self, output_mode):
        clone = self.copy()
        clone.output_mode = output_mode
        return clone

    def parameters(self):
        """Flat list of ``(layer index, name, array)`` in a fixed order."""
        return [
            (i, name, layer.params[name])
            for i, layer in enumerate(self.layers)
            for name in layer.param_names
        ]

    def n_parameters(self):
        return sum(a.size for _, _, a in self.parameters())

    # forward / backward ---------------------------------------------------

    def _check_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"expected batch of shape (N, {self.input_shape}), got {x.shape}")
        return x

    def _run(self, x):
        caches = []
        h = x
        for layer in self.layers:
            h, cache = layer.forward(h)
            caches.append(cache)
        logits = h
        log_probs = log_softmax(logits)
        probs = np.exp(log_probs)
        head = None
        if self.output_mode.kind == "softmax_then_reverse_sigmoid":
            mode = self.output_mode
            head_out, aux = reverse_sigmoid_transform(probs, mode.beta, mode.gamma, mode.clip_eps)
            head = (probs, head_out, aux)
            out = head_out
        else:
            out = probs
        return out, log_probs, caches, head

    def logits(self, x):
        h = self._check_batch(x)
        for layer in self.layers:
            h, _ = layer.forward(h)
        return h

    def forward(self, x):
        """Batch of probability rows, output head applied last."""
        return self._run(self._check_batch(x))[0]

    __call__ = forward

    def _head_backward(self, grad_out, head):
        """Gradient at the output probabilities -> gradient at the logits."""
        if head is not None:
            probs, head_out, aux = head
            mode = self.output_mode
            grad_probs = reverse_sigmoid_transform_backward(grad_out, head_out, aux, mode.beta, mode.gamma)
        else:
            grad_probs = grad_out
            probs = None
        return grad_probs, probs

    def _backward(self, grad_logits, caches, need_params=True):
        grads = [None] * len(self.layers)
        g = grad_logits
        for i in range(len(self.layers) - 1, -1, -1):
            g, pg = self.layers[i].backward(g, caches[i])
            if need_params:
                for name, arr in pg.items():
                    if not np.all(np.isfinite(arr)):
                        raise NumericalError(
                            f"non-finite gradient for {name} in layer {i} ({self.layers[i].kind})",
                            layer=f"{i}:{self.layers[i].kind}",
                        )
                grads[i] = pg
        return g, grads

    def loss_and_gradients(self, x, targets, loss="cross_entropy_soft"):
        """Mean loss over the batch and per-layer parameter gradients.

        Gradients are returned as a list aligned with :meth:`parameters`.
        """
        losses.check_kind(loss)
        x = self._check_batch(x)
        if len(x) == 0:
            raise ValueError("empty batch")
        targets = np.asarray(targets, dtype=np.float64)
        out, log_probs, caches, head = self._run(x)
        value = losses.loss_value(out, targets, loss)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite {loss} loss at output head ({self.output_mode.kind})",
                                 layer="output")
        probs = np.exp(log_probs)
        if head is None and loss in ("cross_entropy_soft", "kl"):
            grad_logits = losses.softmax_fused_grad(probs, log_probs, targets, loss)
        else:
            grad_out = losses.loss_grad(out, targets, loss)
            grad_probs, _ = self._head_backward(grad_out, head)
            grad_logits = probs * (grad_probs - (grad_probs * probs).sum(axis=-1, keepdims=True))
        _, grads = self._backward(grad_logits, caches)
        flat = [grads[i][name] for i, name, _ in self.parameters()]
        return value, flat

    def input_gradient(self, x, grad_out):
        """Vector-Jacobian product of the output probabilities with respect to ``x``."""
        x = self._check_batch(x)
        out, log_probs, caches, head = self._run(x)
        probs = np.exp(log_probs)
        grad_probs, _ = self._head_backward(np.asarray(grad_out, dtype=np.float64), head)
        grad_logits = probs * (grad_probs - (grad_probs * probs).sum(axis=-1, keepdims=True))
        g, _ = self._backward(grad_logits, caches, need_params=False)
        return g

    # persistence ----------------------------------------------------------

    def describe(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [layer.describe() for layer in self.layers],
            "output_mode": self.output_mode.to_dict(),
            "seed": self.seed,
        }

    def to_bytes(self):
        arrays = {f"{i}.{name}": arr for i, name, arr in self.parameters()}
        buf = io.BytesIO()
        np.savez(buf, __meta__=np.frombuffer(json.dumps(self.describe()).encode(), dtype=np.uint8),
                 **arrays)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        with np.load(io.BytesIO(data)) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            net = cls(meta["input_shape"], [layer_from_description(d) for d in meta["layers"]],
                      OutputMode(**meta["output_mode"]), meta["seed"])
            for i, name, _ in net.parameters():
                net.layers[i].params[name] = z[f"{i}.{name}"].astype(np.float64)
        return net

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())

    def weights_equal(self, other):
        a, b = self.parameters(), other.parameters()
        return len(a) == len(b) and all(np.array_equal(x[2], y[2]) for x, y in zip(a, b))


def forward(net, batch):
    return net.forward(batch)


def loss_and_gradients(net, batch, targets, loss="cross_entropy_soft"):
    return net.loss_and_gradients(batch, targets, loss)


def input_jacobian(net, x, class_index):
    """d(output probability of ``class_index``)/dx, shaped like ``x``.

    ``x`` may be a single sample or a batch; ``class_index`` may be an int or
    one index per sample.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == net.input_shape
    batch = x[None] if single else x
    idx = np.broadcast_to(np.asarray(class_index), (len(batch),))
    if np.any(idx < 0) or np.any(idx >= net.num_classes):
        raise ShapeError(f"class index out of range for {net.num_classes} classes")
    seed = np.zeros((len(batch), net.num_classes))
    seed[np.arange(len(batch)), idx] = 1.0
    g = net.input_gradient(batch, seed)
    return g[0] if single else g
