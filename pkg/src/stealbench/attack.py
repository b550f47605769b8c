"""Model-stealing attack strategies driven through a budgeted protected query API."""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .defense import QueryLedger, protected_query, sample_key
from .engine.augment import AugmentPolicy, augment_batch
from .engine.losses import LOSS_KINDS
from .engine.network import Network, OutputMode, input_jacobian
from .engine.optim import OptimizerState
from .engine.training import train
from .errors import BudgetExhausted, ConfigError
from .inversion import apply_inversion
from .metrics import MetricsReport, compare

log = logging.getLogger(__name__)

STRATEGIES = ("sample", "argmax_sample", "random", "jacobian_augmentation")
DEFAULT_CHECKPOINTS = (300, 600, 1200, 2400, 4800, 9600, 19200)
QUERY_CHUNK = 1024
MAX_STALE_DRAWS = 20


class AttackConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    name: str = ""
    # "unprotected" bypasses the defense; used for reference curves
    target: Literal["protected", "unprotected"] = "protected"
    strategy: Literal[STRATEGIES] = "sample"
    label_mode: Optional[Literal["probabilities", "argmax_onehot"]] = None
    loss: Literal[LOSS_KINDS] = "cross_entropy_soft"
    stolen_output_mode: Literal["softmax", "softmax_then_reverse_sigmoid"] = "softmax"
    # None: reuse the defense's beta/gamma (the attacker knows the defense)
    stolen_beta: Optional[float] = Field(None, gt=0)
    stolen_gamma: Optional[float] = Field(None, gt=0)
    inversion: Literal["none", "linear", "mlp"] = "none"
    budget: int = Field(19200, ge=1)
    steps: int = Field(4000, ge=0)
    batch_size: int = Field(64, ge=1)
    lambda_: float = Field(0.1, alias="lambda", ge=0)
    rho_epochs: int = Field(40, ge=0)
    n_seed_samples: int = Field(150, ge=1)
    max_shift: int = Field(2, ge=0)
    allow_flip: bool = False
    optimizer: Literal["sgd", "rmsprop"] = "rmsprop"
    learning_rate: Optional[float] = Field(None, gt=0)
    checkpoints: List[int] = Field(default_factory=lambda: list(DEFAULT_CHECKPOINTS))
    seed: int = 0

    @model_validator(mode="after")
    def _consistent(self):
        mode = self.label_mode
        if mode is None:
            object.__setattr__(self, "label_mode",
                               "argmax_onehot" if self.strategy == "argmax_sample" else "probabilities")
        elif self.strategy == "argmax_sample" and mode != "argmax_onehot":
            raise ValueError("argmax_sample uses top-1 labels only")
        if self.strategy == "jacobian_augmentation" and not (self.lambda_ > 0 and self.rho_epochs >= 1):
            raise ValueError("jacobian_augmentation needs lambda > 0 and rho_epochs >= 1")
        if self.inversion != "none" and self.label_mode != "probabilities":
            raise ValueError("inversion needs label_mode=probabilities")
        if self.budget < self.batch_size:
            raise ValueError("budget must be at least one batch")
        if not self.name:
            object.__setattr__(self, "name", self.strategy)
        return self

    @property
    def augment(self):
        return AugmentPolicy(self.max_shift, self.allow_flip)

    def make_optimizer(self):
        return OptimizerState(self.optimizer, self.learning_rate)

    def stage_checkpoints(self):
        points = sorted({c for c in self.checkpoints if 0 < c < self.budget} | {self.budget})
        return points


@dataclass
class CurvePoint:
    queries: int
    report: MetricsReport


@dataclass
class AttackResult:
    name: str
    stolen: Network
    curve: List[CurvePoint]
    ledger: QueryLedger
    info: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.curve[-1].report


def generate_queries(strategy, seed_pool, count, rng, augment=None, input_shape=None,
                     input_range=(0.0, 1.0)):
    """Draw ``count`` query inputs for a non-adaptive strategy."""
    if strategy in ("sample", "argmax_sample", "jacobian_augmentation"):
        if seed_pool is None or len(seed_pool) == 0:
            raise ConfigError(f"{strategy} needs a nonempty seed pool")
        batch = np.asarray(seed_pool)[rng.integers(0, len(seed_pool), size=count)]
        if augment is not None and augment.active:
            batch = augment_batch(batch, augment, rng)
        return np.asarray(batch, dtype=np.float64)
    if strategy == "random":
        if input_shape is None:
            if seed_pool is None:
                raise ConfigError("random queries need the input shape")
            input_shape = np.asarray(seed_pool).shape[1:]
        lo, hi = input_range
        return rng.uniform(lo, hi, size=(count, *input_shape))
    raise ConfigError(f"unknown strategy {strategy!r}")


def jacobian_augment_round(stolen, pool, labels, lam, input_range=(0.0, 1.0)):
    """Return ``pool`` followed by one Jacobian-sign step of every member.

    Each new point is ``x + lam * sign(d stolen(x)[label] / dx)``, clipped to
    the input range; ``sign(0) = 0``.
    """
    pool = np.asarray(pool, dtype=np.float64)
    steps = []
    for start in range(0, len(pool), QUERY_CHUNK):
        chunk = pool[start:start + QUERY_CHUNK]
        grad = input_jacobian(stolen, chunk, np.asarray(labels)[start:start + QUERY_CHUNK])
        steps.append(chunk + lam * np.sign(grad))
    lo, hi = input_range
    new = np.clip(np.concatenate(steps), lo, hi)
    return np.concatenate([pool, new])


def fresh_network_like(base, seed, output_mode=None):
    desc = base.describe()
    from .engine.layers import layer_from_description

    mode = output_mode if output_mode is not None else OutputMode()
    return Network(desc["input_shape"], [layer_from_description(d) for d in desc["layers"]], mode, seed)


def _to_targets(responses, cfg, inversion):
    if inversion is not None:
        responses = apply_inversion(inversion, responses)
    if cfg.label_mode == "argmax_onehot":
        k = responses.shape[1]
        return np.eye(k)[responses.argmax(axis=1)]
    return responses


class _QueryClient:
    """Charges the ledger for novel inputs and replays cached answers for repeats."""

    def __init__(self, base, defense, ledger, strategy):
        self.base = base
        self.defense = defense
        self.ledger = ledger
        self.strategy = strategy
        self.seen = set()

    def ask(self, batch, dedupe=True):
        """Return (novel inputs, their responses), charging one query each."""
        keep = []
        for i, x in enumerate(batch):
            key = sample_key(x)
            if dedupe and key in self.seen:
                continue
            self.seen.add(key)
            keep.append(i)
        novel = batch[keep]
        if len(novel) == 0:
            return novel, np.zeros((0, self.base.num_classes))
        out = []
        for start in range(0, len(novel), QUERY_CHUNK):
            out.append(protected_query(self.base, self.defense, novel[start:start + QUERY_CHUNK],
                                       self.ledger, self.strategy))
        return novel, np.concatenate(out)


def resolve_stolen_output_mode(cfg, defense):
    if cfg.stolen_output_mode == "softmax":
        return OutputMode()
    beta = cfg.stolen_beta if cfg.stolen_beta is not None else defense.beta
    gamma = cfg.stolen_gamma if cfg.stolen_gamma is not None else defense.gamma
    if not beta > 0:
        raise ConfigError("same-defense-layer attack needs a positive beta")
    return OutputMode.reverse_sigmoid(beta, gamma, defense.clip_eps)


def run_stealing_attack(base, defense, cfg, eval_set, seed_pool=None, input_range=(0.0, 1.0),
                        inversion=None, rng=None):
    """Query the protected base model up to the budget and train a stolen copy.

    The stolen network reuses the base architecture. It is evaluated at each
    checkpoint against the unprotected base outputs on ``eval_set``; a
    reverse-sigmoid head used during training is stripped for evaluation.
    """
    if cfg.inversion != "none" and inversion is None:
        raise ConfigError(f"attack {cfg.name!r} needs a fitted {cfg.inversion} inversion model")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    mode = resolve_stolen_output_mode(cfg, defense)
    stolen = fresh_network_like(base, int(rng.integers(2**31)), mode)
    ledger = QueryLedger(cfg.budget)
    client = _QueryClient(base, defense, ledger, cfg.strategy)
    opt = cfg.make_optimizer()
    reference = base.forward(eval_set.inputs)

    def evaluate(net):
        replica = net if net.output_mode.kind == "softmax" else net.with_output_mode(OutputMode())
        return compare(reference, replica.forward(eval_set.inputs), eval_set.labels)

    if cfg.strategy == "jacobian_augmentation":
        return _run_jacobian(base, stolen, client, cfg, opt, evaluate, seed_pool, input_range,
                             inversion, rng)

    xs, ts = [], []
    curve = []
    stages = cfg.stage_checkpoints()
    done_steps = 0
    exhausted_pool = False
    for i, target in enumerate(stages):
        stale = 0
        while ledger.used < target and not exhausted_pool:
            need = target - ledger.used
            batch = generate_queries(cfg.strategy, seed_pool, need, rng, cfg.augment,
                                     input_range=input_range)
            novel, responses = client.ask(batch)
            if len(novel) == 0:
                stale += 1
                exhausted_pool = stale >= MAX_STALE_DRAWS
                continue
            xs.append(novel)
            ts.append(_to_targets(responses, cfg, inversion))
        if not xs:
            continue
        x_all = np.concatenate(xs)
        t_all = np.concatenate(ts)
        xs, ts = [x_all], [t_all]
        steps = math.floor(cfg.steps * (i + 1) / len(stages)) - done_steps
        done_steps += steps
        stolen, _ = train(stolen, x_all, t_all, steps, cfg.batch_size, cfg.loss, opt,
                          cfg.augment, rng, in_place=True)
        curve.append(CurvePoint(ledger.used, evaluate(stolen)))
        log.info("%s: %d queries, agreement %.4f", cfg.name, ledger.used, curve[-1].report.agreement)
        if exhausted_pool:
            break
    info = {"unique_queries": ledger.used, "pool_exhausted": exhausted_pool, "train_steps": done_steps}
    return AttackResult(cfg.name, stolen, curve, ledger, info)


def _run_jacobian(base, stolen, client, cfg, opt, evaluate, seed_pool, input_range, inversion, rng):
    ledger = client.ledger
    if seed_pool is None or len(seed_pool) == 0:
        raise ConfigError("jacobian_augmentation needs a nonempty seed pool")
    n_seed = min(cfg.n_seed_samples, len(seed_pool), cfg.budget)
    pool = np.asarray(seed_pool, dtype=np.float64)[rng.choice(len(seed_pool), n_seed, replace=False)]
    _, responses = client.ask(pool, dedupe=False)
    curve = []
    rounds = []
    total_steps = 0
    while True:
        targets = _to_targets(responses, cfg, inversion)
        steps = cfg.rho_epochs * math.ceil(len(pool) / cfg.batch_size)
        stolen, _ = train(stolen, pool, targets, steps, cfg.batch_size, cfg.loss, opt,
                          cfg.augment, rng, in_place=True)
        total_steps += steps
        curve.append(CurvePoint(ledger.used, evaluate(stolen)))
        log.info("%s: %d queries, agreement %.4f", cfg.name, ledger.used, curve[-1].report.agreement)
        if ledger.remaining == 0:
            break
        labels = responses.argmax(axis=1)
        expanded = jacobian_augment_round(stolen, pool, labels, cfg.lambda_, input_range)
        children = expanded[len(pool):][:ledger.remaining]
        parent_labels = labels[:len(children)]
        try:
            _, child_responses = client.ask(children, dedupe=False)
        except BudgetExhausted:
            break
        child_labels = child_responses.argmax(axis=1)
        rounds.append({
            "round": len(rounds) + 1,
            "new_samples": int(len(children)),
            "label_changed_frac": float(np.mean(child_labels != parent_labels)),
        })
        pool = np.concatenate([pool, children])
        responses = np.concatenate([responses, child_responses])
    info = {"rounds": rounds, "train_steps": total_steps, "final_pool": int(len(pool))}
    return AttackResult(cfg.name, stolen, curve, ledger, info)
