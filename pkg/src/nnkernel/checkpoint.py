"""NNKC checkpoints: run config, network tensors and the centre bank.

Tensors are stored as float32, so a ``Checkpoint`` rounds its parameters to
float32 on construction.  That makes save -> load lossless with respect to
the in-memory object.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, ValidationError
from .kernel import CentreBank
from .mlp import Layer, MlpModel

MAGIC = b"NNKC"
VERSION = 1


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


@dataclass
class Checkpoint:
    config: RunConfig
    model: MlpModel
    bank: CentreBank

    def __post_init__(self):
        self.model = self.model.copy()
        for layer in self.model.all_layers():
            layer.weight = _f32(layer.weight)
            layer.bias = _f32(layer.bias)
        b = self.bank
        self.bank = CentreBank(_f32(b.centres), b.labels, np.maximum(_f32(b.weights), np.float32(1e-6)),
                               b.version, b.n_classes)


def _write_tensor(fh, a) -> None:
    a = np.asarray(a)
    fh.write(struct.pack("<B", a.ndim))
    fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
    fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.offset, self.path = data, 0, path

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise ValidationError(f"{self.path}: truncated at offset {self.offset}")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def array(self, dtype, count):
        size = np.dtype(dtype).itemsize * count
        if self.offset + size > len(self.data):
            raise ValidationError(f"{self.path}: truncated at offset {self.offset}")
        out = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.offset)
        self.offset += size
        return out

    def tensor(self):
        (rank,) = self.unpack("<B")
        shape = self.unpack(f"<{rank}Q")
        return self.array("<f4", int(np.prod(shape, dtype=np.int64))).reshape(shape).astype(np.float64)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    blob = json.dumps(ckpt.config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HQ", VERSION, len(blob)))
        fh.write(blob)
        for p in ckpt.model.parameters():
            _write_tensor(fh, p)
        bank = ckpt.bank
        fh.write(struct.pack("<QQ", bank.size, bank.dim))
        fh.write(np.ascontiguousarray(bank.centres, dtype="<f4").tobytes())
        fh.write(bank.labels.astype("<u4").tobytes())
        fh.write(bank.weights.astype("<f4").tobytes())
        fh.write(struct.pack("<Q", bank.version))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValidationError(f"{path}: not an NNKC checkpoint")
    r = _Reader(data, path)
    r.offset = 4
    version, length = r.unpack("<HQ")
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    config = RunConfig.from_dict(json.loads(r.array("u1", length).tobytes().decode("utf-8")))

    n_layers = len(config.hidden_sizes) + 1
    layers = []
    for i in range(n_layers):
        w, b = r.tensor(), r.tensor()
        act = "relu" if i < n_layers - 1 else "none"
        layers.append(Layer(w, b, act, config.dropout))
    head = None
    if config.loss == "softmax":
        head = Layer(r.tensor(), r.tensor(), "none", 0.0)
    model = MlpModel(layers, head)

    m, d = r.unpack("<QQ")
    centres = r.array("<f4", m * d).reshape(m, d).astype(np.float64)
    labels = r.array("<u4", m).astype(np.int64)
    weights = r.array("<f4", m).astype(np.float64)
    (bank_version,) = r.unpack("<Q")
    if r.offset != len(data):
        raise ValidationError(f"{path}: {len(data) - r.offset} trailing bytes")
    return Checkpoint(config, model, CentreBank(centres, labels, weights, bank_version))
