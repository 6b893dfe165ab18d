"""Flat run configuration shared by the library entry points and the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import numpy as np

from .ann import EXACT_THRESHOLD, SearchParams
from .bank import UpdateSchedule
from .kernel import KernelConfig
from .mlp import TrainConfig


class ValidationError(ValueError):
    """Bad user input: configuration, data files or incompatible artifacts."""


# Named sub-streams derived from the single run seed.
STREAMS = {"init": 0, "shuffle": 1, "dropout": 2, "kmeans": 3, "ann": 4, "split": 5}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, STREAMS[name]])


@dataclass
class RunConfig:
    # kernel
    sigma: float = 1.0
    epsilon_floor: float = 1e-30
    self_exclude: bool = True
    # optimisation
    learning_rate: float = 0.01
    batch_size: int = 20
    weight_decay: float = 0.0002
    epochs: int = 50
    seed: int = 0
    learn_kernel_weights: bool = True
    freeze_network: bool = False
    dropout_active: bool = True
    # centre refresh
    update_interval: float = 10.0
    k_train: int = 100
    # neighbour search
    backtrack_budget: int = 1500
    restarts: int = 4
    max_degree: int = 32
    exact_threshold: int = EXACT_THRESHOLD
    # model
    hidden_sizes: List[int] = field(default_factory=lambda: [64])
    embedding_dim: int = 16
    dropout: float = 0.0
    loss: str = "nnk"
    # evaluation and data
    k_values: List[int] = field(default_factory=lambda: [1, 2, 4, 8])
    kmeans_restarts: int = 10
    protocol: str = "classification"
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    transfer_fraction: float = 0.5
    data: Optional[str] = None
    output: Optional[str] = None

    def __post_init__(self):
        if self.loss not in ("nnk", "softmax"):
            raise ValidationError(f"loss must be 'nnk' or 'softmax', got {self.loss!r}")
        if self.embedding_dim < 1 or any(h < 1 for h in self.hidden_sizes):
            raise ValidationError("layer sizes must be positive")
        if self.protocol not in ("classification", "transfer"):
            raise ValidationError(f"protocol must be 'classification' or 'transfer', got {self.protocol!r}")
        if not (0.0 <= self.val_fraction < 1.0 and 0.0 <= self.test_fraction < 1.0
                and self.val_fraction + self.test_fraction < 1.0):
            raise ValidationError("val_fraction and test_fraction must leave room for training data")
        if not 0.0 < self.transfer_fraction < 1.0:
            raise ValidationError("transfer_fraction must lie in (0, 1)")
        self.hidden_sizes = [int(h) for h in self.hidden_sizes]
        self.k_values = [int(k) for k in self.k_values]
        try:
            self.kernel_config()
            self.train_config()
            self.schedule()
            self.search_params()
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValidationError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**values)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            values = json.load(fh)
        if not isinstance(values, dict):
            raise ValidationError(f"{path}: expected a JSON object")
        return cls.from_dict(values)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **changes})

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(self.sigma, self.epsilon_floor, self.self_exclude)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.batch_size, self.weight_decay, self.epochs, self.seed,
                           self.learn_kernel_weights, self.freeze_network, self.dropout_active)

    def schedule(self) -> UpdateSchedule:
        return UpdateSchedule(self.update_interval, self.k_train)

    def search_params(self) -> SearchParams:
        return SearchParams(self.k_train, max(self.backtrack_budget, self.k_train), self.restarts, self.seed)
