"""Labelled feature datasets: CSV and NNKF binary I/O, split tagging."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import ValidationError

NNKF_MAGIC = b"NNKF"
NNKF_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: Optional[np.ndarray] = None
    label_names: List = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValidationError("features must be n x d with one label per row")
        if not np.all(np.isfinite(self.features)):
            bad = int(np.argwhere(~np.isfinite(self.features))[0, 0])
            raise ValidationError(f"non-finite feature in row {bad}")
        if len(self.labels):
            present = np.unique(self.labels)
            if present[0] != 0 or present[-1] != len(present) - 1:
                raise ValidationError("class ids must be dense in [0, C)")
        if self.split is None:
            self.split = np.full(len(self.labels), "train")
        self.split = np.asarray(self.split, dtype="<U5")
        if not set(np.unique(self.split)) <= set(SPLITS):
            raise ValidationError(f"split tags must be one of {SPLITS}")
        if not self.label_names:
            self.label_names = list(range(self.n_classes))

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, split: str, required: bool = False):
        mask = self.split == split
        if required and not mask.any():
            raise ValidationError(f"the {split!r} split is empty")
        return self.features[mask], self.labels[mask]

    def select(self, mask) -> "Dataset":
        """Rows where ``mask`` holds, labels kept as they are (may become sparse)."""
        mask = np.asarray(mask)
        out = Dataset.__new__(Dataset)
        out.features, out.labels = self.features[mask], self.labels[mask]
        out.split, out.label_names = self.split[mask], list(self.label_names)
        return out

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.split, other.split)
            and list(self.label_names) == list(other.label_names)
        )


def _dense_labels(raw: list):
    """Map raw labels to dense ids; numeric labels sort numerically."""
    try:
        keys = [int(v) for v in raw]
    except ValueError:
        keys = list(raw)
    names = sorted(set(keys))
    lookup = {name: i for i, name in enumerate(names)}
    return np.array([lookup[k] for k in keys], dtype=np.int64), names


def read_csv(path) -> Dataset:
    rows, raw_labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: empty file")
        header = [h.strip() for h in header]
        d = len(header) - 1
        if header[0] != "label" or header[1:] != [f"f{i}" for i in range(d)] or d < 1:
            raise ValidationError(f"{path}:1: header must be 'label,f0,...,f{{d-1}}'")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ValidationError(f"{path}:{line}: expected {d + 1} fields, got {len(row)}")
            try:
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ValidationError(f"{path}:{line}: {exc}") from None
            if not all(math.isfinite(v) for v in values):
                raise ValidationError(f"{path}:{line}: non-finite feature")
            raw_labels.append(row[0].strip())
            rows.append(values)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    labels, names = _dense_labels(raw_labels)
    return Dataset(np.array(rows), labels, label_names=names)


def write_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i}" for i in range(dataset.dim)])
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([dataset.label_names[label]] + [repr(float(v)) for v in row])


def read_nnkf(path) -> Dataset:
    data = Path(path).read_bytes()
    head = struct.calcsize("<HQQ")
    if data[:4] != NNKF_MAGIC:
        raise ValidationError(f"{path}: bad magic, not an NNKF file")
    if len(data) < 4 + head:
        raise ValidationError(f"{path}: truncated header")
    version, n, d = struct.unpack_from("<HQQ", data, 4)
    if version != NNKF_VERSION:
        raise ValidationError(f"{path}: unsupported NNKF version {version}")
    offset = 4 + head
    expected = offset + 4 * n + 4 * n * d
    if len(data) != expected:
        raise ValidationError(f"{path}: expected {expected} bytes, found {len(data)} (offset {offset})")
    raw = np.frombuffer(data, dtype="<u4", count=n, offset=offset)
    features = np.frombuffer(data, dtype="<f4", count=n * d, offset=offset + 4 * n).reshape(n, d)
    if not np.all(np.isfinite(features)):
        bad = int(np.argwhere(~np.isfinite(features))[0, 0])
        raise ValidationError(f"{path}: non-finite feature in row {bad} (offset {offset + 4 * n + 4 * bad * d})")
    labels, names = _dense_labels(raw.tolist())
    return Dataset(features.astype(np.float64), labels, label_names=names)


def write_nnkf(dataset: Dataset, path) -> None:
    names = dataset.label_names
    raw = np.array([names[i] for i in dataset.labels], dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(NNKF_MAGIC)
        fh.write(struct.pack("<HQQ", NNKF_VERSION, len(dataset.labels), dataset.dim))
        fh.write(raw.tobytes())
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f4").tobytes())


def load_dataset(path) -> Dataset:
    """Read a CSV or NNKF file, sniffing the NNKF magic."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: no such file")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    return read_nnkf(path) if magic == NNKF_MAGIC else read_csv(path)


def assign_splits(dataset: Dataset, val_fraction: float = 0.2, test_fraction: float = 0.0, seed=0) -> Dataset:
    """Stratified random split tags; returns a new dataset."""
    rng = np.random.default_rng(seed)
    split = np.full(len(dataset.labels), "train", dtype="<U5")
    for c in range(dataset.n_classes):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        n_test = int(round(test_fraction * len(idx)))
        n_val = int(round(val_fraction * len(idx)))
        split[idx[:n_test]] = "test"
        split[idx[n_test:n_test + n_val]] = "val"
    return Dataset(dataset.features, dataset.labels, split, list(dataset.label_names))


def transfer_splits(dataset: Dataset, fraction: float = 0.5, val_fraction: float = 0.0, seed=0) -> Dataset:
    """Train (and optionally val) on the first classes, test on the withheld rest."""
    from .metrics import split_transfer

    train_classes, _ = split_transfer(dataset.labels, fraction)
    rng = np.random.default_rng(seed)
    split = np.full(len(dataset.labels), "test", dtype="<U5")
    for c in train_classes:
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        n_val = int(round(val_fraction * len(idx)))
        split[idx] = "train"
        split[idx[:n_val]] = "val"
    return Dataset(dataset.features, dataset.labels, split, list(dataset.label_names))


def prepare_splits(dataset: Dataset, config) -> Dataset:
    """Deterministic split tags for ``config.protocol``, seeded by the run seed."""
    from .config import stream

    seed = stream(config.seed, "split")
    if config.protocol == "transfer":
        return transfer_splits(dataset, config.transfer_fraction, config.val_fraction, seed)
    return assign_splits(dataset, config.val_fraction, config.test_fraction, seed)
