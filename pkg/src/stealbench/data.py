"""Dataset loading, synthetic data, and the base/attacker split."""

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    input_range: tuple = (0.0, 1.0)
    name: str = ""

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        lo, hi = self.input_range
        if len(self.inputs) and (self.inputs.min() < lo or self.inputs.max() > hi):
            raise ValueError(f"inputs fall outside declared range {self.input_range}")
        self.inputs.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return tuple(self.inputs.shape[1:])

    def subset(self, index, name=None):
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.inputs[index].copy(), self.labels[index].copy(), self.num_classes,
                       self.input_range, self.name if name is None else name)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, expected_magic, ndim):
    with _open(path) as f:
        data = f.read()
    if len(data) < 8:
        raise FormatError(f"{path}: truncated IDX header", offset=len(data))
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{path}: truncated IDX header", offset=len(data))
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    size = int(np.prod(dims))
    if len(data) - header < size:
        raise FormatError(f"{path}: truncated payload, expected {size} bytes", offset=len(data))
    arr = np.frombuffer(data, dtype=np.uint8, count=size, offset=header)
    return arr.reshape(dims)


def load_idx(images_path, labels_path, num_classes=10, name="idx"):
    """Read an IDX image/label pair (optionally gzipped). Pixels scaled by 1/255."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise FormatError(
            f"count mismatch: {len(images)} images vs {len(labels)} labels", offset=4
        )
    inputs = images.astype(np.float64)[..., None] / 255.0
    return Dataset(inputs, labels.astype(np.int64), num_classes, name=name)


def write_idx(images_path, labels_path, images_u8, labels_u8):
    """Write an IDX pair; used for fixtures and for exporting subsets."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels_u8 = np.asarray(labels_u8, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images_u8.shape))
        f.write(images_u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels_u8)))
        f.write(labels_u8.tobytes())


def load_csv_dataset(path, num_classes, name=None):
    """One row per sample: integer label, then features already in [0, 1]."""
    labels, rows = [], []
    with open(path, newline="") as f:
        for i, row in enumerate(csv.reader(f)):
            if not row:
                continue
            try:
                label = int(row[0])
                feats = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise FormatError(f"{path}: non-numeric cell ({exc})", offset=f"row {i}") from None
            if not 0 <= label < num_classes:
                raise FormatError(f"{path}: label {label} not in [0, {num_classes})", offset=f"row {i}")
            if rows and len(feats) != len(rows[0]):
                raise FormatError(f"{path}: ragged row", offset=f"row {i}")
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise FormatError(f"{path}: empty dataset")
    return Dataset(np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64),
                   num_classes, name=name or Path(path).stem)


def save_csv_dataset(ds, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for x, y in zip(ds.inputs.reshape(len(ds), -1), ds.labels):
            w.writerow([int(y)] + [repr(float(v)) for v in x])


def synth_blobs(num_classes, dims, n_per_class, spread=0.05, seed=0):
    """Isotropic Gaussian blobs in [0, 1]^dims around well-separated centers.

    Centers are drawn from [0.2, 0.8]^dims and rejected until every pair is at
    least ``4 * spread`` apart.
    """
    rng = np.random.default_rng(seed)
    centers = []
    attempts = 0
    while len(centers) < num_classes:
        c = rng.uniform(0.2, 0.8, size=dims)
        if all(np.linalg.norm(c - o) >= 4 * spread for o in centers):
            centers.append(c)
        attempts += 1
        if attempts > 10000:
            raise ValueError("could not place separated centers; lower spread or raise dims")
    inputs = np.concatenate([
        np.clip(c + spread * rng.standard_normal((n_per_class, dims)), 0.0, 1.0) for c in centers
    ])
    labels = np.repeat(np.arange(num_classes), n_per_class)
    return Dataset(inputs, labels, num_classes, name="synth_blobs")


def load_mnist_subset():
    """The 5,000-image MNIST subset (500 per class) bundled with mlxtend."""
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    inputs = (x.astype(np.float64) / 255.0).reshape(-1, 28, 28, 1)
    return Dataset(inputs, y.astype(np.int64), 10, name="mnist_subset")


@dataclass(frozen=True, eq=False)
class Split:
    base_train: Dataset
    attacker_pool: np.ndarray
    test: Dataset
    base_index: np.ndarray = field(default=None)
    attacker_index: np.ndarray = field(default=None)
    test_index: np.ndarray = field(default=None)


def _stratified_take(labels, index, frac, rng, num_classes):
    taken, rest = [], []
    for k in range(num_classes):
        members = index[labels[index] == k]
        if len(members) == 0:
            continue
        if len(members) < 2:
            raise ValueError(f"class {k} has fewer than 2 samples; cannot stratify")
        perm = rng.permutation(members)
        n = int(round(frac * len(members)))
        taken.append(perm[:n])
        rest.append(perm[n:])
    return np.sort(np.concatenate(taken)), np.sort(np.concatenate(rest))


def split_base_attacker(ds, attacker_frac=0.33, seed=0, test=None, test_frac=0.0):
    """Stratified per-class split into base training data and an unlabeled attacker pool.

    With no separate ``test`` dataset, a stratified ``test_frac`` of ``ds`` is
    held out first. The three index sets partition ``range(len(ds))``.
    """
    rng = np.random.default_rng(seed)
    all_index = np.arange(len(ds))
    if test is None:
        if test_frac <= 0:
            raise ValueError("need a test dataset or test_frac > 0")
        test_index, remaining = _stratified_take(ds.labels, all_index, test_frac, rng, ds.num_classes)
        test = ds.subset(test_index, name=f"{ds.name}:test")
    else:
        test_index, remaining = np.array([], dtype=np.int64), all_index
    attacker_index, base_index = _stratified_take(ds.labels, remaining, attacker_frac, rng,
                                                  ds.num_classes)
    pool = ds.inputs[attacker_index].copy()
    pool.setflags(write=False)
    return Split(ds.subset(base_index, name=f"{ds.name}:base"), pool, test,
                 base_index, attacker_index, test_index)
