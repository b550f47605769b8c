"""Experiment orchestration: base training, defense evaluation, attacks, grid search."""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .. import data as datamod
from ..attack import AttackConfig, AttackResult, run_stealing_attack
from ..defense import DefenseConfig, ProtectedModel
from ..engine.augment import AugmentPolicy, augment_batch
from ..engine.network import Network
from ..engine.optim import OptimizerState
from ..engine.training import train
from ..errors import StealbenchError
from ..inversion import apply_inversion, fit_inversion_linear, fit_inversion_mlp
from ..metrics import MetricsReport, accuracy, compare, kl_avg
from .spec import ExperimentSpec, derive_seed

log = logging.getLogger(__name__)


class StageError(StealbenchError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Prepared:
    split: datamod.Split
    input_range: tuple
    num_classes: int


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    defense: DefenseConfig
    base_accuracy: float
    protected_report: MetricsReport
    curves: Dict[str, AttackResult]
    inversion: dict = field(default_factory=dict)
    grid: Optional["GridSearchResult"] = None
    strength: List[dict] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    dataset_info: dict = field(default_factory=dict)


@dataclass
class GridSearchResult:
    chosen: DefenseConfig
    rows: List[dict]
    reference_agreement: float
    met_threshold: bool


def prepare_data(spec):
    ds_spec = spec.dataset
    seed = derive_seed(spec.seed, "split")
    test = None
    if ds_spec.kind == "mnist_subset":
        ds = datamod.load_mnist_subset()
    elif ds_spec.kind == "idx":
        ds = datamod.load_idx(ds_spec.images, ds_spec.labels, ds_spec.num_classes)
        if ds_spec.test_images:
            test = datamod.load_idx(ds_spec.test_images, ds_spec.test_labels, ds_spec.num_classes,
                                    name="idx:test")
    elif ds_spec.kind == "csv":
        ds = datamod.load_csv_dataset(ds_spec.path, ds_spec.num_classes)
        if ds_spec.test_path:
            test = datamod.load_csv_dataset(ds_spec.test_path, ds_spec.num_classes)
    else:
        s = ds_spec.synth
        ds = datamod.synth_blobs(ds_spec.num_classes, s.dims, s.n_per_class, s.spread,
                                 seed=derive_seed(spec.seed, "synth"))
    if ds_spec.subsample_per_class:
        rng = np.random.default_rng(derive_seed(spec.seed, "subsample"))
        keep = np.concatenate([
            rng.permutation(np.flatnonzero(ds.labels == k))[:ds_spec.subsample_per_class]
            for k in range(ds.num_classes)
        ])
        ds = ds.subset(np.sort(keep))
    split = datamod.split_base_attacker(ds, ds_spec.attacker_frac, seed, test=test,
                                        test_frac=ds_spec.test_frac)
    return Prepared(split, ds.input_range, ds.num_classes)


def build_network(model_spec, input_shape, num_classes, seed):
    if model_spec.arch == "simple":
        return Network.simple_convnet(input_shape, num_classes, model_spec.width_scale, seed=seed)
    n_in = int(np.prod(input_shape))
    return Network.dense(n_in, model_spec.hidden, num_classes, seed=seed, input_shape=input_shape)


def train_base(spec, prepared, steps=None):
    """Train the victim model on the base split with one-hot labels."""
    m = spec.base
    train_set = prepared.split.base_train
    net = build_network(m, train_set.input_shape, prepared.num_classes,
                        derive_seed(spec.seed, "base-init"))
    targets = np.eye(prepared.num_classes)[train_set.labels]
    augment = AugmentPolicy(m.max_shift, m.allow_flip) if len(train_set.input_shape) == 3 else AugmentPolicy()
    net, _ = train(net, train_set.inputs, targets, m.steps if steps is None else steps, m.batch_size,
                   "cross_entropy_soft", OptimizerState(m.optimizer, m.learning_rate), augment,
                   np.random.default_rng(derive_seed(spec.seed, "base-train")))
    return net


def _augment_policy(cfg, input_shape):
    # shifting/flipping is only meaningful for square images
    if len(input_shape) == 3 and input_shape[0] == input_shape[1]:
        return cfg
    return cfg.model_copy(update={"max_shift": 0, "allow_flip": False})


def protected_report(base, defense, test):
    reference = base.forward(test.inputs)
    return compare(reference, ProtectedModel(base, defense).forward(test.inputs), test.labels)


def run_attack(spec, cfg, base, defense, prepared, inversion_models=None):
    cfg = _augment_policy(cfg, prepared.split.test.input_shape)
    target = defense if cfg.target == "protected" else DefenseConfig()
    inversion = None
    if cfg.inversion != "none":
        inversion = (inversion_models or {}).get(cfg.inversion)
    rng = np.random.default_rng(derive_seed(spec.seed, f"attack/{cfg.name}/{cfg.seed}"))
    if cfg.stolen_output_mode != "softmax" and cfg.stolen_beta is None and defense.kind == "reverse_sigmoid":
        cfg = cfg.model_copy(update={"stolen_beta": defense.beta, "stolen_gamma": defense.gamma})
    return run_stealing_attack(base, target, cfg, prepared.split.test, prepared.split.attacker_pool,
                               prepared.input_range, inversion=inversion, rng=rng)


def inversion_pairs(spec, base, defense, prepared):
    """Oracle-assisted (protected, unprotected) pairs on augmented attacker-pool inputs."""
    rng = np.random.default_rng(derive_seed(spec.seed, "inversion-pairs"))
    pool = prepared.split.attacker_pool
    x = pool[rng.integers(0, len(pool), size=spec.inversion.n_pairs)]
    if len(pool.shape) == 4 and pool.shape[1] == pool.shape[2]:
        x = augment_batch(x, AugmentPolicy(spec.base.max_shift, spec.base.allow_flip), rng)
    unprotected = base.forward(x)
    return ProtectedModel(base, defense).forward(x), unprotected


def fit_inversions(spec, base, defense, prepared, kinds):
    protected, unprotected = inversion_pairs(spec, base, defense, prepared)
    test = prepared.split.test
    test_unprotected = base.forward(test.inputs)
    test_protected = ProtectedModel(base, defense).forward(test.inputs)
    models, report = {}, {
        "mode": "oracle-assisted",
        "n_pairs": int(len(protected)),
        "kl_orientation": "KL(recovered || unprotected)",
        "protected_heldout_kl": kl_avg(test_protected, test_unprotected),
    }
    for kind in kinds:
        if kind == "linear":
            model = fit_inversion_linear(protected, unprotected)
        else:
            model = fit_inversion_mlp(protected, unprotected, steps=spec.inversion.mlp_steps,
                                      learning_rate=spec.inversion.mlp_learning_rate,
                                      seed=derive_seed(spec.seed, "inversion-mlp"))
        models[kind] = model
        report[kind] = {
            "fit_val_kl": model.val_kl,
            "heldout_kl": kl_avg(apply_inversion(model, test_protected), test_unprotected),
            "r2": None if np.isnan(model.r2) else model.r2,
            "ridge_used": model.ridge_used,
        }
    return models, report


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_experiment(spec, base=None, prepared=None, defense=None):
    """Train (or reuse) the base model, evaluate the defense, run every attack."""
    timings = {}
    t0 = time.perf_counter()
    if prepared is None:
        prepared = _stage("data", prepare_data, spec)
    timings["data"] = time.perf_counter() - t0
    if base is None:
        t = time.perf_counter()
        base = _stage("train-base", train_base, spec, prepared)
        timings["train-base"] = time.perf_counter() - t
    defense = spec.defense if defense is None else defense
    test = prepared.split.test
    base_acc = accuracy(base.forward(test.inputs), test.labels)
    prot = _stage("protected-eval", protected_report, base, defense, test)

    attacks = spec.attack_configs()
    kinds = sorted({a.inversion for a in attacks if a.inversion != "none"})
    if spec.inversion.evaluate:
        kinds = ["linear", "mlp"]
    models, inv_report = {}, {}
    if kinds:
        t = time.perf_counter()
        models, inv_report = _stage("inversion", fit_inversions, spec, base, defense, prepared, kinds)
        timings["inversion"] = time.perf_counter() - t

    curves = {}
    for cfg in attacks:
        t = time.perf_counter()
        curves[cfg.name] = _stage(f"attack:{cfg.name}", run_attack, spec, cfg, base, defense,
                                  prepared, models)
        timings[f"attack:{cfg.name}"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0
    seeds = {tag: derive_seed(spec.seed, tag) for tag in ("split", "base-init", "base-train")}
    seeds.update({f"attack/{a.name}": derive_seed(spec.seed, f"attack/{a.name}/{a.seed}") for a in attacks})
    info = {
        "name": prepared.split.base_train.name.split(":")[0],
        "base_train": len(prepared.split.base_train),
        "attacker_pool": len(prepared.split.attacker_pool),
        "test": len(test),
        "num_classes": prepared.num_classes,
    }
    return ExperimentResult(spec, defense, base_acc, prot, curves, inv_report, timings=timings,
                            seeds=seeds, dataset_info=info)


def grid_points(template, grid):
    """Defense configs covering the grid for the template's kind."""
    kind = template.kind if template.kind != "none" else "reverse_sigmoid"
    points = []
    for beta in grid.betas:
        if beta == 0:
            points.append(DefenseConfig(noise_seed=template.noise_seed))
            continue
        base = {"kind": kind, "beta": beta}
        if kind == "reverse_sigmoid":
            extra = [{"gamma": g} for g in grid.gammas]
        elif kind in ("uniform_x_concave", "uniform_x_convex"):
            extra = [{"rho_width": r} for r in grid.rho_widths]
        elif kind == "sine":
            extra = [{"f_freq": f} for f in grid.f_freqs]
        else:
            extra = [{}]
        for e in extra:
            points.append(template.model_copy(update={**base, **e}))
    # deduplicate identity points from several beta=0 entries
    seen, unique = set(), []
    for p in points:
        key = p.model_dump_json()
        if key not in seen:
            seen.add(key)
            unique.append(p)
    return unique


def select_defense(rows, threshold, min_protected_agreement=0.0):
    """Pick the highest-cosine row among those meeting the drop threshold.

    Ties go to the smaller beta, then the smaller gamma. When no row meets the
    threshold, the row with the largest drop wins (ties: higher cosine, then
    smaller beta).
    """
    eligible = [r for r in rows
                if r["drop"] >= threshold and r["protected_agreement"] >= min_protected_agreement]
    if eligible:
        best = min(eligible, key=lambda r: (-r["cosine"], r["beta"], r["gamma"]))
        return best, True
    best = min(rows, key=lambda r: (-r["drop"], -r["cosine"], r["beta"], r["gamma"]))
    return best, False


def grid_search_defense(spec, base=None, prepared=None, grid=None):
    """Search defense parameters with the Sample attack at the grid budget."""
    grid = grid or spec.grid
    if grid is None:
        raise ValueError("spec has no grid section")
    if prepared is None:
        prepared = _stage("data", prepare_data, spec)
    if base is None:
        base = _stage("train-base", train_base, spec, prepared)
    attack = grid.attack.model_copy(update={"checkpoints": list(spec.checkpoints), "target": "protected"})
    reference = run_attack(spec, attack, base, DefenseConfig(), prepared).final.agreement
    rows = []
    for point in grid_points(spec.defense, grid):
        rep = protected_report(base, point, prepared.split.test)
        stolen = run_attack(spec, attack, base, point, prepared).final
        rows.append({
            "kind": point.kind, "beta": point.beta, "gamma": point.gamma,
            "rho_width": point.rho_width, "f_freq": point.f_freq,
            "protected_agreement": rep.agreement, "cosine": rep.cosine, "mae": rep.mae,
            "kl": rep.kl, "protected_accuracy": rep.accuracy,
            "stolen_agreement": stolen.agreement, "drop": reference - stolen.agreement,
            "_config": point,
        })
        log.info("grid %s beta=%g gamma=%g: stolen %.4f drop %.4f cosine %.4f", point.kind,
                 point.beta, point.gamma, stolen.agreement, reference - stolen.agreement, rep.cosine)
    best, met = select_defense(rows, grid.drop_threshold, grid.min_protected_agreement)
    chosen = best["_config"]
    clean = [{k: v for k, v in r.items() if k != "_config"} for r in rows]
    for r, orig in zip(clean, rows):
        r["selected"] = orig is best
    return GridSearchResult(chosen, clean, reference, met)


def strength_sweep(spec, prepared=None, defense=None):
    """Defense effectiveness against bases trained for different lengths."""
    if prepared is None:
        prepared = prepare_data(spec)
    defense = spec.defense if defense is None else defense
    attack = (spec.grid.attack if spec.grid else AttackConfig(name="strength_sample"))
    attack = attack.model_copy(update={"checkpoints": list(spec.checkpoints)})
    rows = []
    for steps in spec.strength_sweep:
        base = train_base(spec, prepared, steps=steps)
        test = prepared.split.test
        rep = protected_report(base, defense, test)
        stolen = run_attack(spec, attack, base, defense, prepared).final
        base_acc = accuracy(base.forward(test.inputs), test.labels)
        rows.append({
            "base_steps": steps, "base_accuracy": base_acc, "protected_accuracy": rep.accuracy,
            "stolen_accuracy": stolen.accuracy, "accuracy_drop": base_acc - stolen.accuracy,
        })
    return rows


def run_sweep(spec, base=None, prepared=None):
    """Grid-search the defense, then run the full experiment with the chosen point."""
    t0 = time.perf_counter()
    if prepared is None:
        prepared = _stage("data", prepare_data, spec)
    if base is None:
        base = _stage("train-base", train_base, spec, prepared)
    grid = _stage("grid-search", grid_search_defense, spec, base, prepared)
    t_grid = time.perf_counter() - t0
    result = run_experiment(spec, base=base, prepared=prepared, defense=grid.chosen)
    result.grid = grid
    result.timings["grid-search"] = t_grid
    if spec.strength_sweep:
        t = time.perf_counter()
        result.strength = _stage("strength-sweep", strength_sweep, spec, prepared, grid.chosen)
        result.timings["strength-sweep"] = time.perf_counter() - t
    return result
