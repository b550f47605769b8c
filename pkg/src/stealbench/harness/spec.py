"""Experiment spec: the JSON config schema consumed by the CLI and the service."""

import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, model_validator

from ..attack import DEFAULT_CHECKPOINTS, AttackConfig
from ..defense import DefenseConfig
from ..errors import ValidationError


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SynthSpec(_Frozen):
    dims: int = Field(20, ge=1)
    n_per_class: int = Field(300, ge=2)
    spread: float = Field(0.03, gt=0)


class DatasetSpec(_Frozen):
    kind: Literal["mnist_subset", "idx", "csv", "synth_blobs"] = "mnist_subset"
    images: Optional[str] = None
    labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    path: Optional[str] = None
    test_path: Optional[str] = None
    num_classes: int = Field(10, ge=2)
    # per-class stratified subsample of the training file, 0 = use everything
    subsample_per_class: int = Field(0, ge=0)
    test_frac: float = Field(0.2, gt=0, lt=1)
    attacker_frac: float = Field(0.33, gt=0, lt=1)
    synth: SynthSpec = SynthSpec()

    def files(self):
        if self.kind == "idx":
            return [p for p in (self.images, self.labels, self.test_images, self.test_labels) if p]
        if self.kind == "csv":
            return [p for p in (self.path, self.test_path) if p]
        return []

    @model_validator(mode="after")
    def _paths_present(self):
        if self.kind == "idx" and not (self.images and self.labels):
            raise ValueError("idx dataset needs 'images' and 'labels'")
        if self.kind == "idx" and bool(self.test_images) != bool(self.test_labels):
            raise ValueError("give both 'test_images' and 'test_labels' or neither")
        if self.kind == "csv" and not self.path:
            raise ValueError("csv dataset needs 'path'")
        return self


class ModelSpec(_Frozen):
    arch: Literal["dense", "simple"] = "dense"
    hidden: List[int] = Field(default_factory=lambda: [128, 128])
    # "simple" convnet widths relative to 64/64/128/128/256/256
    width_scale: float = Field(0.5, gt=0)
    steps: int = Field(4000, ge=0)
    batch_size: int = Field(64, ge=1)
    optimizer: Literal["sgd", "rmsprop"] = "rmsprop"
    learning_rate: Optional[float] = Field(None, gt=0)
    max_shift: int = Field(2, ge=0)
    allow_flip: bool = False


class GridSpec(_Frozen):
    betas: List[float] = Field(default_factory=lambda: [0.05] + [round(0.1 * i, 1) for i in range(1, 11)])
    gammas: List[float] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64, 128, 256])
    rho_widths: List[float] = Field(default_factory=lambda: [0.1, 0.25, 0.5, 1.0])
    f_freqs: List[float] = Field(default_factory=lambda: [1, 2, 4, 8, 16])
    drop_threshold: float = 0.20
    min_protected_agreement: float = Field(0.0, ge=0, le=1)
    attack: AttackConfig = AttackConfig(name="grid_sample", strategy="sample")

    @model_validator(mode="after")
    def _nonempty(self):
        if not self.betas:
            raise ValueError("grid needs at least one beta")
        return self


class InversionSpec(_Frozen):
    n_pairs: int = Field(5000, ge=1000)
    mlp_steps: int = Field(4000, ge=1)
    mlp_learning_rate: float = Field(1e-3, gt=0)
    # evaluate both inversion maps even when no attack uses them
    evaluate: bool = False


class ExperimentSpec(_Frozen):
    name: str = "experiment"
    seed: int = 0
    dataset: DatasetSpec = DatasetSpec()
    base: ModelSpec = ModelSpec()
    defense: DefenseConfig = DefenseConfig()
    attacks: List[AttackConfig] = Field(default_factory=lambda: [AttackConfig()])
    checkpoints: List[int] = Field(default_factory=lambda: list(DEFAULT_CHECKPOINTS))
    grid: Optional[GridSpec] = None
    inversion: InversionSpec = InversionSpec()
    # base-model training lengths for the base-strength vs. defense-effectiveness sweep
    strength_sweep: List[int] = Field(default_factory=list)
    out_dir: str = "results"

    @model_validator(mode="after")
    def _unique_names(self):
        names = [a.name for a in self.attacks]
        if len(set(names)) != len(names):
            raise ValueError(f"attack names must be unique: {names}")
        return self

    def attack_configs(self):
        """Attacks with the experiment-wide checkpoint grid applied."""
        return [a.model_copy(update={"checkpoints": list(self.checkpoints)}) for a in self.attacks]

    def with_overrides(self, seed=None, out_dir=None, budget=None):
        update = {}
        if seed is not None:
            update["seed"] = int(seed)
        if out_dir is not None:
            update["out_dir"] = str(out_dir)
        if budget is not None:
            update["attacks"] = [_with_budget(a, budget) for a in self.attacks]
            update["checkpoints"] = sorted({c for c in self.checkpoints if c < budget} | {budget})
            if self.grid is not None:
                update["grid"] = self.grid.model_copy(update={"attack": _with_budget(self.grid.attack, budget)})
        return self.model_copy(update=update) if update else self

    def to_json_dict(self, include_out_dir=True):
        d = self.model_dump(mode="json", by_alias=True)
        if not include_out_dir:
            d.pop("out_dir")
        return d

    def fingerprint(self):
        blob = json.dumps(self.to_json_dict(include_out_dir=False), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _with_budget(attack, budget):
    return AttackConfig.model_validate({**attack.model_dump(by_alias=True), "budget": int(budget),
                                        "batch_size": min(attack.batch_size, int(budget))})


def parse_spec(data, base_dir=None, check_files=True):
    """Validate a spec mapping; relative dataset paths resolve against ``base_dir``."""
    try:
        spec = ExperimentSpec.model_validate(data)
    except PydanticValidationError as exc:
        raise ValidationError(f"invalid experiment spec: {exc}") from None
    if base_dir is not None:
        ds = spec.dataset
        fields = ("images", "labels", "test_images", "test_labels", "path", "test_path")
        update = {f: str((Path(base_dir) / getattr(ds, f)).resolve())
                  for f in fields if getattr(ds, f) and not Path(getattr(ds, f)).is_absolute()}
        if update:
            spec = spec.model_copy(update={"dataset": ds.model_copy(update=update)})
    if check_files:
        missing = [p for p in spec.dataset.files() if not Path(p).is_file()]
        if missing:
            raise ValidationError(f"dataset file(s) not found: {', '.join(missing)}")
    return spec


def load_spec(path, check_files=True):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"spec file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"spec file {path} is not valid JSON: {exc}") from None
    return parse_spec(data, base_dir=path.parent, check_files=check_files)


def derive_seed(master, tag):
    """Sub-seed for one pipeline role: sha256 of ``"<master>/<tag>"``, first 4 bytes."""
    digest = hashlib.sha256(f"{int(master)}/{tag}".encode()).digest()
    return int.from_bytes(digest[:4], "big")
