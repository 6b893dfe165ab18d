"""Training loop, sigma tuning, evaluation and new-class enrollment."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .ann import NeighbourIndex
from .bank import CentreStore, diagnostics, embed
from .checkpoint import Checkpoint
from .config import RunConfig, ValidationError, stream
from .data import Dataset
from .kernel import CentreBank, batch_classify, batch_loss_backward
from .metrics import accuracy, clustering_nmi, recall_at_k
from .mlp import MlpModel, backward, forward, init_mlp, sgd_step, softmax_head_loss

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: List[Dict] = field(default_factory=list)
    refreshes: List[Dict] = field(default_factory=list)

    @property
    def train_losses(self) -> List[float]:
        return [h["train_loss"] for h in self.history]


def build_model(config: RunConfig, input_dim: int, n_classes: int) -> MlpModel:
    head = n_classes if config.loss == "softmax" else None
    return init_mlp(input_dim, config.hidden_sizes, config.embedding_dim, config.dropout, head,
                    rng=stream(config.seed, "init"))


def _query_neighbours(index: NeighbourIndex, bank: CentreBank, queries, k_train: int) -> np.ndarray:
    return index.table(queries, min(k_train, bank.size))


def kernel_loss(model: MlpModel, bank: CentreBank, index: NeighbourIndex, features, labels, config: RunConfig) -> float:
    """Mean loss of held-out examples against a bank they are not part of."""
    emb = embed(model, features)
    rows = _query_neighbours(index, bank, emb, config.k_train)
    losses, *_ = batch_loss_backward(emb, labels, bank, rows, config.kernel_config())
    return float(losses.mean())


def _fresh_bank(model, features, labels, weights, n_classes, config, version=0):
    bank = CentreBank(embed(model, features), labels, weights, version=version, n_classes=n_classes)
    index = NeighbourIndex(bank.centres, config.max_degree, config.search_params(), config.exact_threshold)
    return bank, index


def train(config: RunConfig, dataset: Dataset, model: Optional[MlpModel] = None) -> TrainResult:
    """Train the embedding network and kernel weights; keep the best-val-loss state.

    Centres and neighbour lists are refreshed before the first step and then
    every ``update_interval`` epochs (counted in optimiser steps, so fractional
    intervals work).  Between refreshes both stay frozen.
    """
    x_train, y_train = dataset.subset("train", required=True)
    x_val, y_val = dataset.subset("val")
    n_classes = int(y_train.max()) + 1
    if model is None:
        model = build_model(config, dataset.dim, n_classes)
    elif model.input_dim != dataset.dim:
        raise ValidationError(f"model expects {model.input_dim} inputs, data has {dataset.dim}")
    if config.loss == "softmax":
        return _train_softmax(config, model, x_train, y_train, x_val, y_val, n_classes)

    tc, kc = config.train_config(), config.kernel_config()
    store = CentreStore(x_train, y_train, config.schedule(), n_classes, config.search_params(),
                        config.max_degree, config.exact_threshold)
    shuffle_rng, dropout_rng = stream(config.seed, "shuffle"), stream(config.seed, "dropout")
    result = TrainResult(None)

    def on_refresh(epoch):
        if not all(np.all(np.isfinite(p)) for p in model.parameters()):
            raise TrainingDiverged(f"non-finite parameters before refresh at epoch {epoch:.2f}")
        try:
            store.refresh(model)
        except OverflowError as exc:
            raise TrainingDiverged(f"{exc} at epoch {epoch:.2f}") from exc
        dist, kval = diagnostics(store.bank, store.table, kc.sigma)
        result.refreshes.append({"epoch": epoch, "version": store.bank.version,
                                 "mean_distance": dist, "mean_kernel": kval})
        log.info("refresh v%d at epoch %.2f: mean distance %.4g, mean kernel %.4g",
                 store.bank.version, epoch, dist, kval)

    n = len(y_train)
    steps_per_epoch = math.ceil(n / tc.batch_size)
    interval = config.schedule().interval_steps(steps_per_epoch)
    on_refresh(0.0)
    best = (math.inf, model.copy(), store.bank.weights.copy())
    step = 0
    for epoch in range(tc.epochs):
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, tc.batch_size):
            ids = perm[start:start + tc.batch_size]
            emb, cache = forward(model, x_train[ids], tc.dropout_active, dropout_rng)
            losses, d_x, d_w, _ = batch_loss_backward(emb, y_train[ids], store.bank, store.table.rows[ids], kc)
            b = len(ids)
            grads = None if tc.freeze_network else backward(model, cache, d_x / b)
            weights = sgd_step(model, store.bank.weights, grads, tc, d_w / b)
            if tc.learn_kernel_weights:
                store.set_weights(weights)
            total += losses.sum()
            step += 1
            if step % interval == 0:
                on_refresh(step / steps_per_epoch)
        train_loss = total / n
        if not math.isfinite(train_loss) or not all(np.all(np.isfinite(p)) for p in model.parameters()):
            raise TrainingDiverged(f"non-finite loss or parameters at epoch {epoch + 1}")
        record = {"epoch": epoch + 1, "train_loss": train_loss}
        if len(y_val):
            bank, index = _fresh_bank(model, x_train, y_train, store.bank.weights, n_classes, config)
            record["val_loss"] = kernel_loss(model, bank, index, x_val, y_val, config)
        result.history.append(record)
        log.info("epoch %d: %s", epoch + 1, record)
        score = record.get("val_loss", -epoch)
        if score < best[0]:
            best = (score, model.copy(), store.bank.weights.copy())

    _, best_model, best_weights = best
    bank, _ = _fresh_bank(best_model, x_train, y_train, best_weights, n_classes, config,
                          version=store.bank.version + 1)
    result.checkpoint = Checkpoint(config, best_model, bank)
    return result


def _train_softmax(config, model, x_train, y_train, x_val, y_val, n_classes) -> TrainResult:
    """Conventional softmax-head baseline with the same optimiser."""
    tc = config.train_config()
    shuffle_rng, dropout_rng = stream(config.seed, "shuffle"), stream(config.seed, "dropout")
    result = TrainResult(None)
    n = len(y_train)
    best = (math.inf, model.copy())
    for epoch in range(tc.epochs):
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, tc.batch_size):
            ids = perm[start:start + tc.batch_size]
            loss, grads = softmax_head_loss(model, x_train[ids], y_train[ids], tc.dropout_active, dropout_rng)
            sgd_step(model, None, grads, tc)
            total += loss * len(ids)
        train_loss = total / n
        if not math.isfinite(train_loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}")
        record = {"epoch": epoch + 1, "train_loss": train_loss}
        if len(y_val):
            record["val_loss"] = softmax_head_loss(model, x_val, y_val)[0]
        result.history.append(record)
        score = record.get("val_loss", -epoch)
        if score < best[0]:
            best = (score, model.copy())
    best_model = best[1]
    bank = CentreBank.from_embeddings(embed(best_model, x_train), y_train, version=1, n_classes=n_classes)
    result.checkpoint = Checkpoint(config, best_model, bank)
    return result


def tune_sigma(config: RunConfig, dataset: Dataset, grid, model: Optional[MlpModel] = None) -> float:
    """Grid value with the lowest validation loss under frozen initial embeddings.

    Ties go to the smaller sigma.
    """
    grid = sorted(set(float(s) for s in grid))
    if not grid:
        raise ValidationError("sigma grid is empty")
    if any(not s > 0 for s in grid):
        raise ValidationError("sigma values must be positive")
    x_train, y_train = dataset.subset("train", required=True)
    x_val, y_val = dataset.subset("val", required=True)
    if model is None:
        model = build_model(config, dataset.dim, int(y_train.max()) + 1)
    bank, index = _fresh_bank(model, x_train, y_train, np.ones(len(y_train)), None, config)
    best_sigma, best_loss = grid[0], math.inf
    for sigma in grid:
        loss = kernel_loss(model, bank, index, x_val, y_val, config.replace(sigma=sigma))
        log.info("sigma %g: validation loss %.6g", sigma, loss)
        if loss < best_loss:
            best_sigma, best_loss = sigma, loss
    return best_sigma


def predict_classes(ckpt: Checkpoint, features) -> np.ndarray:
    model = ckpt.model
    if ckpt.config.loss == "softmax" and model.head is not None:
        logits, _ = forward(model, features, use_head=True)
        return logits.argmax(axis=1)
    emb = embed(model, features)
    bank = ckpt.bank
    index = NeighbourIndex(bank.centres, ckpt.config.max_degree, ckpt.config.search_params(),
                           ckpt.config.exact_threshold)
    rows = _query_neighbours(index, bank, emb, ckpt.config.k_train)
    return batch_classify(emb, bank, rows, ckpt.config.kernel_config()).argmax(axis=1)


def evaluate(ckpt: Checkpoint, dataset: Dataset, mode: str = "classification", split: str = "test") -> Dict:
    """Classification accuracy, or NMI and Recall@K on withheld classes."""
    features, labels = dataset.subset(split, required=True)
    if features.shape[1] != ckpt.model.input_dim:
        raise ValidationError(f"data has {features.shape[1]} features, model expects {ckpt.model.input_dim}")
    if mode == "classification":
        pred = predict_classes(ckpt, features)
        return {"mode": mode, "n": int(len(labels)), "accuracy": accuracy(pred, labels)}
    if mode == "transfer":
        overlap = np.intersect1d(np.unique(labels), np.unique(ckpt.bank.labels))
        if overlap.size:
            raise ValidationError(f"transfer evaluation classes overlap training classes: {overlap.tolist()}")
        emb = embed(ckpt.model, features)
        k_values = [k for k in ckpt.config.k_values if k < len(labels)]
        recall = recall_at_k(emb, labels, k_values)
        score = clustering_nmi(emb, labels, seed=stream(ckpt.config.seed, "kmeans"),
                               restarts=ckpt.config.kmeans_restarts)
        table = {f"R@{k}": v for k, v in recall.items()}
        table["NMI"] = score
        return {"mode": mode, "n": int(len(labels)), "nmi": score,
                "recall": {str(k): v for k, v in recall.items()}, "table": table}
    raise ValidationError(f"unknown evaluation mode {mode!r}")


def format_report(report: Dict) -> str:
    """Aligned two-line text table of a report's scores."""
    if report["mode"] == "classification":
        cols = {"Accuracy": report["accuracy"]}
    else:
        cols = report["table"]
    width = max(8, *(len(c) for c in cols))
    head = "  ".join(c.rjust(width) for c in cols)
    row = "  ".join(f"{100 * v:{width}.2f}" for v in cols.values())
    return f"{head}\n{row}"


def enroll(ckpt: Checkpoint, features, labels) -> Checkpoint:
    """Add new examples to the bank with weight 1 and no network update."""
    labels = np.asarray(labels, dtype=np.int64)
    emb = embed(ckpt.model, features)
    bank = ckpt.bank
    merged = CentreBank(
        np.concatenate([bank.centres, emb]),
        np.concatenate([bank.labels, labels]),
        np.concatenate([bank.weights, np.ones(len(labels))]),
        version=bank.version + 1,
    )
    return Checkpoint(ckpt.config, ckpt.model, merged)
