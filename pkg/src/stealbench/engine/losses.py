"""Batch-averaged losses over probability outputs.

``kl`` is KL(output || target), the orientation used when fitting an
inversion model to recover unprotected probabilities.
"""

import numpy as np

LOG_CLIP = 1e-12
LOSS_KINDS = ("cross_entropy_soft", "mse", "kl")


def check_kind(kind):
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def _log(p):
    return np.log(np.maximum(p, LOG_CLIP))


def loss_value(probs, targets, kind):
    check_kind(kind)
    n = len(probs)
    if kind == "cross_entropy_soft":
        return float(-(targets * _log(probs)).sum() / n)
    if kind == "mse":
        return float(((probs - targets) ** 2).mean(axis=-1).sum() / n)
    return float((probs * (_log(probs) - _log(targets))).sum() / n)


def loss_grad(probs, targets, kind):
    """Gradient of :func:`loss_value` with respect to ``probs``."""
    check_kind(kind)
    n, k = probs.shape
    if kind == "cross_entropy_soft":
        return np.where(probs > LOG_CLIP, -targets / np.maximum(probs, LOG_CLIP), 0.0) / n
    if kind == "mse":
        return 2.0 * (probs - targets) / (k * n)
    g = _log(probs) - _log(targets) + (probs > LOG_CLIP)
    return g / n


def softmax_fused_grad(probs, log_probs, targets, kind):
    """Gradient with respect to logits when the output is a plain softmax.

    Avoids the vanishing ``-t / p`` term when a softmax probability underflows.
    """
    n = len(probs)
    if kind == "cross_entropy_soft":
        return (probs * targets.sum(axis=-1, keepdims=True) - targets) / n
    if kind == "kl":
        g = log_probs - _log(targets)
        return probs * (g - (probs * g).sum(axis=-1, keepdims=True)) / n
    raise ValueError(f"no fused gradient for {kind!r}")
