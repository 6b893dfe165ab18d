"""Gaussian kernel classifier and the nearest-neighbour kernel loss.

Every training embedding acts as the centre of a Gaussian window.  A query is
classified by summing the weighted kernel values of its neighbouring centres
per class and normalising.  All sums are evaluated in log space, shifted by the
smallest squared distance, so that arbitrarily distant queries still produce
finite losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

WEIGHT_FLOOR = 1e-6


@dataclass(frozen=True)
class KernelConfig:
    sigma: float = 1.0
    epsilon_floor: float = 1e-30
    self_exclude: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (0 < self.epsilon_floor < 1e-6):
            raise ValueError(f"epsilon_floor must lie in (0, 1e-6), got {self.epsilon_floor}")


@dataclass(frozen=True)
class CentreBank:
    """Frozen snapshot of the Gaussian centres.

    ``centres`` are training embeddings computed without dropout, ``labels``
    their class ids and ``weights`` the learned per-centre kernel weights.
    The arrays are marked read-only so a bank can be shared between readers.
    """

    centres: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    version: int = 0
    n_classes: Optional[int] = None

    def __post_init__(self):
        centres = np.asarray(self.centres, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if centres.ndim != 2:
            raise ValueError("centres must be an m x d matrix")
        m = centres.shape[0]
        if labels.shape != (m,) or weights.shape != (m,):
            raise ValueError(
                f"row count mismatch: centres {m}, labels {labels.shape}, weights {weights.shape}"
            )
        if m and not np.all(weights > 0):
            raise ValueError("kernel weights must be strictly positive")
        if m and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        n_classes = self.n_classes
        if n_classes is None:
            n_classes = int(labels.max()) + 1 if m else 0
        if m and labels.max() >= n_classes:
            raise ValueError(f"label {labels.max()} outside [0, {n_classes})")
        if m and np.bincount(labels, minlength=n_classes).min() == 0:
            raise ValueError("every class needs at least one centre")
        for arr in (centres, labels, weights):
            arr.flags.writeable = False
        object.__setattr__(self, "centres", centres)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "n_classes", int(n_classes))

    @classmethod
    def from_embeddings(cls, embeddings, labels, weights=None, version=0, n_classes=None):
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if weights is None:
            weights = np.ones(len(embeddings))
        return cls(embeddings, labels, weights, version=version, n_classes=n_classes)

    @property
    def size(self) -> int:
        return self.centres.shape[0]

    @property
    def dim(self) -> int:
        return self.centres.shape[1]

    def with_weights(self, weights) -> "CentreBank":
        # Same snapshot, new kernel weights: the version does not change.
        return replace(self, weights=np.array(weights, dtype=np.float64))


@dataclass
class LossGradients:
    d_embedding: np.ndarray
    d_weights: dict = field(default_factory=dict)
    clamped: bool = False


def _check_vector(x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def kernel_value(x, c, sigma: float) -> float:
    """exp(-||x - c||^2 / (2 sigma^2))."""
    x = _check_vector(x, "x")
    c = _check_vector(c, "c")
    if x.shape != c.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {c.shape}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    diff = x - c
    return float(np.exp(-(diff @ diff) / (2.0 * sigma * sigma)))


def _resolve_neighbours(bank: CentreBank, neighbours, self_id, cfg: KernelConfig) -> np.ndarray:
    idx = np.asarray(neighbours, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= bank.size):
        raise IndexError("neighbour id outside the centre bank")
    if self_id is not None and cfg.self_exclude:
        idx = idx[idx != self_id]
    if idx.size == 0:
        raise ValueError("neighbour list is empty after self-exclusion")
    return idx


def _log_terms(x, bank: CentreBank, idx: np.ndarray, sigma: float):
    """Shifted log kernel terms log(w_j f_j) + min_sq/(2 sigma^2) and the shift."""
    x = _check_vector(x)
    if x.shape[0] != bank.dim:
        raise ValueError(f"query has dimension {x.shape[0]}, bank has {bank.dim}")
    diff = x - bank.centres[idx]
    sq = np.einsum("ij,ij->i", diff, diff)
    shift = sq.min()
    terms = np.log(bank.weights[idx]) - (sq - shift) / (2.0 * sigma * sigma)
    return terms, shift, diff


def _logsumexp(a: np.ndarray) -> float:
    top = a.max()
    return float(top + np.log(np.exp(a - top).sum()))


def log_kernel_sums(
    x,
    bank: CentreBank,
    neighbours: Sequence[int],
    true_class: Optional[int] = None,
    cfg: KernelConfig = KernelConfig(),
    self_id: Optional[int] = None,
):
    """Log of the total and per-class weighted kernel sums over ``neighbours``.

    Returns ``(log_S, log_S_per_class)``; absent classes get ``-inf``.
    ``true_class`` is accepted for symmetry with the loss and only validated.
    """
    idx = _resolve_neighbours(bank, neighbours, self_id, cfg)
    if true_class is not None and not 0 <= true_class < bank.n_classes:
        raise ValueError(f"class {true_class} outside [0, {bank.n_classes})")
    terms, shift, _ = _log_terms(x, bank, idx, cfg.sigma)
    offset = -shift / (2.0 * cfg.sigma * cfg.sigma)
    log_s = _logsumexp(terms) + offset
    per_class = np.full(bank.n_classes, -np.inf)
    labels = bank.labels[idx]
    for q in np.unique(labels):
        per_class[q] = _logsumexp(terms[labels == q]) + offset
    return log_s, per_class


def classify(x, bank: CentreBank, neighbours, cfg: KernelConfig = KernelConfig(), self_id=None) -> np.ndarray:
    """Class distribution from the nearest-neighbour kernel classifier."""
    idx = _resolve_neighbours(bank, neighbours, self_id, cfg)
    terms, _, _ = _log_terms(x, bank, idx, cfg.sigma)
    p = np.exp(terms - terms.max())
    p /= p.sum()
    return np.bincount(bank.labels[idx], weights=p, minlength=bank.n_classes)


def predict(probs: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest class id on ties.
    return int(np.argmax(probs))


def nnk_loss(x, true_class: int, bank: CentreBank, neighbours, cfg: KernelConfig = KernelConfig(), self_id=None) -> float:
    if not 0 <= true_class < bank.n_classes:
        raise ValueError(f"class {true_class} outside [0, {bank.n_classes})")
    log_s, per_class = log_kernel_sums(x, bank, neighbours, true_class, cfg, self_id)
    log_p = per_class[true_class] - log_s
    return float(-max(log_p, np.log(cfg.epsilon_floor)))


def nnk_loss_backward(x, true_class: int, bank: CentreBank, neighbours, cfg: KernelConfig = KernelConfig(), self_id=None):
    """Loss and gradients w.r.t. the query embedding and the kernel weights.

    Centres are constants here; they only move when the bank is refreshed.
    When the true-class probability is clamped the gradients are zero and
    ``grads.clamped`` is set.
    """
    if not 0 <= true_class < bank.n_classes:
        raise ValueError(f"class {true_class} outside [0, {bank.n_classes})")
    idx = _resolve_neighbours(bank, neighbours, self_id, cfg)
    terms, _, diff = _log_terms(x, bank, idx, cfg.sigma)
    p = np.exp(terms - terms.max())
    p /= p.sum()
    same = bank.labels[idx] == true_class
    p_true = p[same].sum()
    d = diff.shape[1]
    if p_true <= cfg.epsilon_floor:
        return float(-np.log(cfg.epsilon_floor)), LossGradients(np.zeros(d), {}, clamped=True)
    q = np.where(same, p / p_true, 0.0)
    coef = p - q
    d_x = -(coef @ diff) / (cfg.sigma * cfg.sigma)
    d_w = coef / bank.weights[idx]
    grads = {}
    for j, g in zip(idx.tolist(), d_w.tolist()):
        grads[j] = grads.get(j, 0.0) + g
    return float(-np.log(p_true)), LossGradients(d_x, grads)


def batch_loss_backward(
    embeddings: np.ndarray,
    labels: np.ndarray,
    bank: CentreBank,
    neighbour_rows: np.ndarray,
    cfg: KernelConfig = KernelConfig(),
):
    """Vectorised loss over a batch with rectangular neighbour lists.

    ``neighbour_rows`` is ``(B, k)`` and must already exclude each example's own
    centre.  Returns per-example losses, ``dL/dx`` rows, the dense gradient of
    the summed loss w.r.t. all bank weights, and the clamp mask.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    rows = np.asarray(neighbour_rows, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    s2 = cfg.sigma * cfg.sigma
    diff = x[:, None, :] - bank.centres[rows]
    sq = np.einsum("bkd,bkd->bk", diff, diff)
    terms = np.log(bank.weights[rows]) - (sq - sq.min(axis=1, keepdims=True)) / (2.0 * s2)
    p = np.exp(terms - terms.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    same = bank.labels[rows] == labels[:, None]
    p_true = (p * same).sum(axis=1)
    clamped = p_true <= cfg.epsilon_floor
    safe = np.where(clamped, 1.0, p_true)
    losses = np.where(clamped, -np.log(cfg.epsilon_floor), -np.log(safe))
    coef = p - np.where(same, p / safe[:, None], 0.0)
    coef[clamped] = 0.0
    d_x = -np.einsum("bk,bkd->bd", coef, diff) / s2
    d_w = np.zeros(bank.size)
    np.add.at(d_w, rows.ravel(), (coef / bank.weights[rows]).ravel())
    return losses, d_x, d_w, clamped


def batch_classify(embeddings, bank: CentreBank, neighbour_rows, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    """Class distributions for a batch of queries, one row per query."""
    x = np.asarray(embeddings, dtype=np.float64)
    rows = np.asarray(neighbour_rows, dtype=np.int64)
    diff = x[:, None, :] - bank.centres[rows]
    sq = np.einsum("bkd,bkd->bk", diff, diff)
    terms = np.log(bank.weights[rows]) - sq / (2.0 * cfg.sigma * cfg.sigma)
    p = np.exp(terms - terms.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    out = np.zeros((len(x), bank.n_classes))
    np.add.at(out, (np.repeat(np.arange(len(x)), rows.shape[1]), bank.labels[rows].ravel()), p.ravel())
    return out
