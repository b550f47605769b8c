"""Maps from protected outputs back to unprotected probabilities."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine.network import Network
from .engine.optim import OptimizerState
from .engine.training import train
from .metrics import kl_avg

RIDGE_PENALTY = 1e-6
OUTPUT_FLOOR = 1e-9
FEATURE_FLOOR = 1e-9


@dataclass
class InversionModel:
    kind: str
    num_classes: int
    coef: Optional[np.ndarray] = None  # (K + 1, K) affine map, last row is the intercept
    net: Optional[Network] = None
    ridge_used: bool = False
    r2: float = float("nan")
    val_kl: float = float("nan")
    info: dict = field(default_factory=dict)


def _renormalize(p):
    p = np.maximum(p, OUTPUT_FLOOR)
    return p / p.sum(axis=1, keepdims=True)


def _check_pairs(protected, unprotected):
    protected = np.asarray(protected, dtype=np.float64)
    unprotected = np.asarray(unprotected, dtype=np.float64)
    if protected.shape != unprotected.shape or protected.ndim != 2:
        raise ValueError("pairs must be two (N, K) arrays of equal shape")
    return protected, unprotected


def fit_inversion_linear(protected, unprotected):
    """Per-class affine least squares via the normal equations.

    Probability rows sum to one, so the design with an intercept column is
    always rank deficient; in that case a ridge penalty of 1e-6 is added and
    ``ridge_used`` is set.
    """
    protected, unprotected = _check_pairs(protected, unprotected)
    n, k = protected.shape
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} pairs, got {n}")
    design = np.hstack([protected, np.ones((n, 1))])
    gram = design.T @ design
    rhs = design.T @ unprotected
    ridge = np.linalg.matrix_rank(gram) < k + 1
    if ridge:
        gram = gram + RIDGE_PENALTY * np.eye(k + 1)
    coef = np.linalg.solve(gram, rhs)
    fitted = design @ coef
    ss_res = float(((unprotected - fitted) ** 2).sum())
    ss_tot = float(((unprotected - unprotected.mean(axis=0)) ** 2).sum())
    model = InversionModel("linear", k, coef=coef, ridge_used=bool(ridge),
                           r2=1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0)
    model.val_kl = kl_avg(apply_inversion(model, protected), unprotected)
    return model


def mlp_features(protected):
    return np.log(np.maximum(protected, FEATURE_FLOOR))


def fit_inversion_mlp(protected, unprotected, steps=4000, batch_size=64, learning_rate=1e-3,
                      seed=0, val_frac=0.1, min_pairs=1000):
    """Train a K -> 5K -> 3K -> K softmax MLP minimizing KL(recovered || unprotected).

    Inputs are fed as log-probabilities. A ``val_frac`` slice is held out and
    its recovered KL stored in ``val_kl``.
    """
    protected, unprotected = _check_pairs(protected, unprotected)
    n, k = protected.shape
    if n < min_pairs:
        raise ValueError(f"need at least {min_pairs} pairs, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = int(round(val_frac * n))
    val, fit = order[:n_val], order[n_val:]
    net = Network.dense(k, [5 * k, 3 * k], k, seed=int(rng.integers(2**31)))
    net, trace = train(net, mlp_features(protected[fit]), unprotected[fit], steps, batch_size,
                       loss="kl", opt=OptimizerState("rmsprop", learning_rate), rng=rng)
    model = InversionModel("mlp", k, net=net, info={"final_loss": float(np.mean(trace[-50:]))})
    if n_val:
        model.val_kl = kl_avg(apply_inversion(model, protected[val]), unprotected[val])
    return model


def apply_inversion(model, protected):
    protected = np.asarray(protected, dtype=np.float64)
    single = protected.ndim == 1
    p = np.atleast_2d(protected)
    if model.kind == "linear":
        out = np.hstack([p, np.ones((len(p), 1))]) @ model.coef
    elif model.kind == "mlp":
        out = model.net.forward(mlp_features(p))
    else:
        raise ValueError(f"unknown inversion kind {model.kind!r}")
    out = _renormalize(out)
    return out[0] if single else out


def identity_inversion(num_classes):
    coef = np.vstack([np.eye(num_classes), np.zeros((1, num_classes))])
    return InversionModel("linear", num_classes, coef=coef, r2=1.0)
