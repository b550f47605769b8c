"""Replication and utility metrics over batches of probability vectors.

Argmax ties resolve to the lowest class index everywhere (``np.argmax``).
KL is reported in nats.
"""

from dataclasses import asdict, dataclass

import numpy as np

KL_CLIP = 1e-12


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"batch shape mismatch: {a.shape} vs {b.shape}")
    if len(a) == 0:
        raise ValueError("empty batch")
    return a, b


def agreement(a, b):
    a, b = _pair(a, b)
    return float(np.mean(a.argmax(axis=1) == b.argmax(axis=1)))


def cosine_avg(a, b):
    a, b = _pair(a, b)
    dots = (a * b).sum(axis=1)
    return float(np.mean(dots / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))))


def mae_per_class(a, b):
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def kl_avg(p, q):
    """Mean over samples of KL(p || q); both arguments clipped at 1e-12."""
    p, q = _pair(p, q)
    p = np.maximum(p, KL_CLIP)
    q = np.maximum(q, KL_CLIP)
    return float(np.mean((p * (np.log(p) - np.log(q))).sum(axis=1)))


def accuracy(preds, labels):
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if len(preds) != len(labels):
        raise ValueError("length mismatch")
    if len(preds) == 0:
        raise ValueError("empty batch")
    return float(np.mean(preds.argmax(axis=1) == labels))


@dataclass(frozen=True)
class MetricsReport:
    agreement: float
    cosine: float
    mae: float
    kl: float
    accuracy: float
    n_eval: int

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("agreement", "cosine", "mae", "kl", "accuracy", "n_eval")})


def compare(reference, other, labels):
    """Score ``other`` against ``reference`` outputs; KL is KL(reference || other).

    ``accuracy`` is the accuracy of ``other`` on the true ``labels``.
    """
    return MetricsReport(
        agreement=agreement(other, reference),
        cosine=cosine_avg(other, reference),
        mae=mae_per_class(other, reference),
        kl=kl_avg(reference, other),
        accuracy=accuracy(other, labels),
        n_eval=len(labels),
    )
