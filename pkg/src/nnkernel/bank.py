"""Stored Gaussian centres and their periodically refreshed neighbour lists.

Centres are a snapshot of the training embeddings, recomputed without dropout
every ``update_interval`` epochs.  Between refreshes the network keeps moving,
so neighbour lists go stale; a generous ``k_train`` keeps the relevant centres
in each list anyway, and far-away stale centres contribute ~0 kernel value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .ann import EXACT_THRESHOLD, NeighbourIndex, SearchParams
from .kernel import CentreBank
from .mlp import MlpModel, forward


@dataclass(frozen=True)
class UpdateSchedule:
    update_interval: float = 10.0
    k_train: int = 100

    def __post_init__(self):
        if not self.update_interval > 0:
            raise ValueError("update_interval must be positive")
        if self.k_train < 1:
            raise ValueError("k_train must be at least 1")

    def interval_steps(self, steps_per_epoch: int) -> int:
        return max(1, int(round(self.update_interval * steps_per_epoch)))


@dataclass(frozen=True)
class NeighbourTable:
    rows: np.ndarray  # (m, k) centre ids, nearest first
    bank_version: int

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.ndim != 2:
            raise ValueError("neighbour rows must be a 2-D array")
        if rows.size and (rows == np.arange(len(rows))[:, None]).any():
            raise ValueError("an example lists its own centre as a neighbour")
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)


def embed(model: MlpModel, features, batch: int = 4096) -> np.ndarray:
    """Dropout-free embeddings, as stored in the bank."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.input_dim:
        raise ValueError(f"features of shape {features.shape} do not fit a model with input {model.input_dim}")
    return np.concatenate(
        [forward(model, features[i:i + batch])[0] for i in range(0, len(features), batch)]
    ) if len(features) else np.zeros((0, model.embedding_dim))


def refresh(model: MlpModel, train_features, labels, schedule: UpdateSchedule,
            previous: Optional[CentreBank] = None, n_classes: Optional[int] = None,
            params: SearchParams = SearchParams(), max_degree: int = 32,
            exact_threshold: int = EXACT_THRESHOLD) -> Tuple[CentreBank, NeighbourTable, NeighbourIndex]:
    """Recompute every centre and every training neighbour list.

    Kernel weights carry over from ``previous``; the version increments.
    """
    centres = embed(model, train_features)
    with np.errstate(over="ignore", invalid="ignore"):
        if not np.all(np.isfinite(np.einsum("ij,ij->i", centres, centres))):
            raise OverflowError("embeddings too large for squared distances")
    labels = np.asarray(labels, dtype=np.int64)
    if previous is not None:
        if previous.size != len(centres):
            raise ValueError("previous bank has a different number of centres")
        weights, version = previous.weights, previous.version + 1
        n_classes = previous.n_classes if n_classes is None else n_classes
    else:
        weights, version = np.ones(len(centres)), 1
    bank = CentreBank(centres, labels, weights, version=version, n_classes=n_classes)
    index = NeighbourIndex(centres, max_degree, params, exact_threshold)
    k = min(schedule.k_train, bank.size - 1)
    table = NeighbourTable(index.table(centres, k, exclude_self=True), bank.version)
    return bank, table, index


class CentreStore:
    """Owns the current bank, its neighbour table and the search index.

    Readers get immutable snapshots; ``refresh`` swaps all three at once.
    """

    def __init__(self, train_features, labels, schedule: UpdateSchedule, n_classes: Optional[int] = None,
                 params: SearchParams = SearchParams(), max_degree: int = 32,
                 exact_threshold: int = EXACT_THRESHOLD, weights=None):
        self.features = np.asarray(train_features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.schedule = schedule
        self.n_classes = n_classes
        self.params = params
        self.max_degree = max_degree
        self.exact_threshold = exact_threshold
        self._initial_weights = weights
        self.bank: Optional[CentreBank] = None
        self.table: Optional[NeighbourTable] = None
        self.index: Optional[NeighbourIndex] = None

    def refresh(self, model: MlpModel) -> CentreBank:
        previous = self.bank
        if previous is None and self._initial_weights is not None:
            previous = CentreBank(np.zeros((len(self.labels), model.embedding_dim)), self.labels,
                                  self._initial_weights, version=0, n_classes=self.n_classes)
        self.bank, self.table, self.index = refresh(
            model, self.features, self.labels, self.schedule, previous, self.n_classes,
            self.params, self.max_degree, self.exact_threshold,
        )
        return self.bank

    def set_weights(self, weights) -> None:
        self.bank = self.bank.with_weights(weights)

    def neighbours_for(self, example_id: int) -> np.ndarray:
        if self.table is None:
            raise RuntimeError("centre store has not been refreshed yet")
        if not 0 <= example_id < len(self.table.rows):
            raise IndexError(f"unknown training example {example_id}")
        return self.table.rows[example_id]

    def neighbours_for_query(self, embedding, k: Optional[int] = None) -> np.ndarray:
        """Neighbours of a non-training embedding, searched on demand."""
        if self.index is None:
            raise RuntimeError("centre store has not been refreshed yet")
        k = min(k or self.schedule.k_train, self.bank.size)
        return self.index.query(embedding, k)


def diagnostics(bank: CentreBank, table: NeighbourTable, sigma: float) -> Tuple[float, float]:
    """Mean distance and mean kernel value from each centre to its listed neighbours."""
    if table.bank_version != bank.version:
        raise ValueError("neighbour table was computed against a different bank")
    diff = bank.centres[:, None, :] - bank.centres[table.rows]
    sq = np.einsum("mkd,mkd->mk", diff, diff)
    return float(np.sqrt(sq).mean()), float(np.exp(-sq / (2.0 * sigma * sigma)).mean())
