"""Scalar and vector primitives: softmax, sigmoid/logit, reverse sigmoid."""

import numpy as np

from ..errors import DomainError, InvalidInputError


def softmax(logits):
    """Row-wise softmax over the last axis with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise InvalidInputError("softmax needs at least two classes")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax input contains non-finite values")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # exp(-|x|) never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def logit(p):
    """Inverse sigmoid ln(p / (1 - p)); p must lie strictly inside (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(~(p > 0.0)) or np.any(~(p < 1.0)):
        raise DomainError("logit is only defined on the open interval (0, 1)")
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


def sigmoid_logit(x, direction="forward"):
    if direction == "forward":
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("sigmoid input must be finite")
        return sigmoid(x)
    if direction == "inverse":
        return logit(x)
    raise ValueError(f"unknown direction {direction!r}")


def reverse_sigmoid_noise(y, beta, gamma):
    """beta * (s(gamma * s^-1(y)) - 1/2), elementwise.

    The caller clips ``y`` into ``[eps, 1 - eps]`` beforehand; values on the
    closed boundary raise ``DomainError``.
    """
    return beta * (sigmoid(gamma * logit(y)) - 0.5)


def reverse_sigmoid_noise_derivative(y, beta, gamma):
    """d/dy of :func:`reverse_sigmoid_noise`."""
    y = np.asarray(y, dtype=np.float64)
    s = sigmoid(gamma * logit(y))
    return beta * gamma * s * (1.0 - s) / (y * (1.0 - y))


def reverse_sigmoid_transform(y, beta, gamma, clip_eps=1e-7):
    """Perturb a batch of probability rows and renormalize.

    Returns ``(y_hat, aux)`` where ``aux`` holds the intermediates needed to
    backpropagate through the transform.
    """
    y = np.asarray(y, dtype=np.float64)
    inside = (y > clip_eps) & (y < 1.0 - clip_eps)
    y_clipped = np.clip(y, clip_eps, 1.0 - clip_eps)
    raw = y - reverse_sigmoid_noise(y_clipped, beta, gamma)
    kept = raw > clip_eps
    raw = np.maximum(raw, clip_eps)
    total = raw.sum(axis=-1, keepdims=True)
    y_hat = raw / total
    return y_hat, (y_clipped, inside, kept, total)


def reverse_sigmoid_transform_backward(grad, y_hat, aux, beta, gamma):
    y_clipped, inside, kept, total = aux
    d_raw = (grad - (grad * y_hat).sum(axis=-1, keepdims=True)) / total
    d_raw = d_raw * kept
    slope = 1.0 - reverse_sigmoid_noise_derivative(y_clipped, beta, gamma) * inside
    return d_raw * slope
