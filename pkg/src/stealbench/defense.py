"""Output-perturbation defenses and the budgeted query interface."""

import hashlib
from collections import Counter
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .engine.functional import reverse_sigmoid_noise
from .errors import BudgetExhausted, ConfigError

DEFENSE_KINDS = (
    "none",
    "reverse_sigmoid",
    "uniform_random",
    "uniform_x_concave",
    "uniform_x_convex",
    "ranking_preserving_uniform",
    "sine",
)
BASELINE_KINDS = DEFENSE_KINDS[2:]
# share of the original vector blended into a rank-clamped output so that
# values tied after perturbation still follow the strict order of y
RANK_TIE_MIX = 1e-6
STOCHASTIC_KINDS = ("uniform_random", "uniform_x_concave", "uniform_x_convex",
                    "ranking_preserving_uniform")


class DefenseConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal[DEFENSE_KINDS] = "none"
    beta: float = Field(0.0, ge=0.0)
    gamma: float = Field(1.0, gt=0.0)
    rho_width: float = Field(0.5, gt=0.0)
    f_freq: float = Field(1.0, gt=0.0)
    rank_clamp: bool = False
    clip_eps: float = Field(1e-7, gt=0.0, le=1e-3)
    noise_seed: int = 0

    @model_validator(mode="after")
    def _beta_positive(self):
        if self.kind != "none" and not self.beta > 0:
            raise ValueError(f"defense {self.kind!r} needs beta > 0")
        return self

    @property
    def is_identity(self):
        return self.kind == "none"


def baseline_noise(y, kind, beta, rho_width=0.5, f_freq=1.0, rng=None):
    """Additive noise for the baseline defenses, elementwise over ``y``.

    The concave/convex multipliers use the reciprocal-Gaussian form
    ``1 / exp(-(y / rho)^2 / 2)``.
    """
    y = np.asarray(y, dtype=np.float64)
    if kind not in BASELINE_KINDS:
        raise ConfigError(f"unknown baseline defense {kind!r}")
    if kind == "sine":
        return beta * np.sin(f_freq * y)
    if rng is None:
        raise ConfigError(f"{kind} needs a random generator")
    u = rng.uniform(-1.0, 1.0, size=y.shape)
    if kind in ("uniform_random", "ranking_preserving_uniform"):
        return beta * u
    concave = 1.0 / np.exp(-0.5 * (y / rho_width) ** 2)
    if kind == "uniform_x_concave":
        return beta * u * concave
    return beta * u * (1.0 - concave)


def restore_ranking(y, values):
    """Reassign ``values`` so their order follows the order of ``y`` (row-wise)."""
    y = np.atleast_2d(y)
    values = np.atleast_2d(values)
    out = np.empty_like(values)
    # descending by y, lowest index first on ties
    order = np.argsort(-y, axis=1, kind="stable")
    ranked = -np.sort(-values, axis=1)
    np.put_along_axis(out, order, ranked, axis=1)
    return out


def finalize_probs(y, raw_perturbed, rank_clamp=False, clip_eps=1e-7):
    """Clip at ``clip_eps``, renormalize to sum 1, optionally restore the ranking of ``y``."""
    y = np.asarray(y, dtype=np.float64)
    raw = np.maximum(np.asarray(raw_perturbed, dtype=np.float64), clip_eps)
    single = raw.ndim == 1
    raw = np.atleast_2d(raw)
    out = raw / raw.sum(axis=1, keepdims=True)
    if rank_clamp:
        y2 = np.atleast_2d(y)
        out = (1.0 - RANK_TIE_MIX) * restore_ranking(y2, out) + RANK_TIE_MIX * y2
    return out[0] if single else out


def sample_key(x):
    """Stable 64-bit key for one query input."""
    data = np.ascontiguousarray(np.asarray(x, dtype=np.float64)).tobytes()
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def perturb(y, cfg, inputs=None):
    """Apply the configured defense to a batch of base-model outputs.

    Stochastic kinds draw their noise from a generator keyed by
    ``(noise_seed, hash of the input)``, so an identical query always gets an
    identical answer. ``inputs`` is required for those kinds.
    """
    y = np.asarray(y, dtype=np.float64)
    if cfg.kind == "none":
        return y.copy()
    if cfg.kind == "reverse_sigmoid":
        clipped = np.clip(y, cfg.clip_eps, 1.0 - cfg.clip_eps)
        raw = y - reverse_sigmoid_noise(clipped, cfg.beta, cfg.gamma)
        return finalize_probs(y, raw, cfg.rank_clamp, cfg.clip_eps)
    if cfg.kind == "sine":
        noise = baseline_noise(y, "sine", cfg.beta, f_freq=cfg.f_freq)
    else:
        if inputs is None or len(inputs) != len(y):
            raise ConfigError(f"{cfg.kind} needs the query inputs to key its noise")
        noise = np.empty_like(y)
        for i, (row, x) in enumerate(zip(y, inputs)):
            rng = np.random.default_rng([cfg.noise_seed, sample_key(x)])
            noise[i] = baseline_noise(row, cfg.kind, cfg.beta, cfg.rho_width, cfg.f_freq, rng)
    rank = cfg.rank_clamp or cfg.kind == "ranking_preserving_uniform"
    return finalize_probs(y, y + noise, rank, cfg.clip_eps)


class QueryLedger:
    """Counts base-model queries against a fixed budget."""

    def __init__(self, budget):
        if budget < 0:
            raise ValueError("budget must be >= 0")
        self.budget = int(budget)
        self.used = 0
        self.tallies = Counter()

    @property
    def remaining(self):
        return self.budget - self.used

    def charge(self, n, strategy="query"):
        if self.used + n > self.budget:
            raise BudgetExhausted(n, self.used, self.budget)
        self.used += n
        self.tallies[strategy] += n

    def to_dict(self):
        return {"budget": self.budget, "used": self.used, "tallies": dict(sorted(self.tallies.items()))}


def protected_query(base, defense, batch, ledger, strategy="query"):
    """Answer a batch of queries through the defense, charging the ledger first."""
    batch = np.asarray(batch, dtype=np.float64)
    ledger.charge(len(batch), strategy)
    return perturb(base.forward(batch), defense, batch)


class ProtectedModel:
    """A base network composed with a defense; no budget accounting."""

    def __init__(self, base, defense):
        self.base = base
        self.defense = defense

    def forward(self, batch):
        batch = np.asarray(batch, dtype=np.float64)
        return perturb(self.base.forward(batch), self.defense, batch)

    __call__ = forward
