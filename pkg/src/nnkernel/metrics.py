"""Embedding quality metrics: NMI over a k-means clustering, Recall@K, accuracy."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np

from .ann import knn_table


@dataclass(frozen=True)
class ClusterAssignment:
    assignments: np.ndarray
    cluster_count: int
    inertia: float = 0.0


def _sq_dists(x, centres):
    diff = x[:, None, :] - centres[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_once(x, k, rng, max_iter):
    n = len(x)
    # k-means++ seeding
    centres = np.empty((k, x.shape[1]))
    centres[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centres[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        idx = rng.choice(n, p=closest / total) if total > 0 else rng.integers(n)
        centres[j] = x[idx]
        closest = np.minimum(closest, _sq_dists(x, centres[j:j + 1])[:, 0])

    assign = None
    for _ in range(max_iter):
        d = _sq_dists(x, centres)
        new = d.argmin(axis=1)
        own = d[np.arange(n), new]
        counts = np.bincount(new, minlength=k)
        while (counts == 0).any():
            # Reseed an empty cluster with the farthest point that can be spared.
            empty = int(np.flatnonzero(counts == 0)[0])
            far = int(np.argmax(np.where(counts[new] > 1, own, -1.0)))
            counts[new[far]] -= 1
            new[far] = empty
            counts[empty] += 1
            own[far] = 0.0
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            centres[j] = x[assign == j].mean(axis=0)
    inertia = float(((x - centres[assign]) ** 2).sum())
    return assign, inertia


def kmeans(embeddings, k: int, seed=0, restarts: int = 1, max_iter: int = 300) -> ClusterAssignment:
    """Lloyd's algorithm from k-means++ seeds; best of ``restarts`` by inertia."""
    x = np.asarray(embeddings, dtype=np.float64)
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        assign, inertia = _kmeans_once(x, k, rng, max_iter)
        if best is None or inertia < best[1]:
            best = (assign, inertia)
    return ClusterAssignment(best[0], k, best[1])


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(clusters, labels) -> float:
    """I(clusters; labels) / mean(H(clusters), H(labels)), natural log."""
    a = np.asarray(clusters.assignments if isinstance(clusters, ClusterAssignment) else clusters)
    b = np.asarray(labels)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    _, a = np.unique(a, return_inverse=True)
    _, b = np.unique(b, return_inverse=True)
    joint = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(joint, (a, b), 1.0)
    h_a = _entropy(joint.sum(axis=1))
    h_b = _entropy(joint.sum(axis=0))
    denom = (h_a + h_b) / 2.0
    if denom == 0.0:
        return 0.0
    mutual = h_a + h_b - _entropy(joint.ravel())
    return float(min(max(mutual / denom, 0.0), 1.0))


def recall_at_k(embeddings, labels, k_values: Iterable[int] = (1, 2, 4, 8)) -> Dict[int, float]:
    """Fraction of examples with a same-class example among their exact K nearest."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(x)
    k_values = sorted(set(int(k) for k in k_values))
    if not k_values or k_values[0] < 1 or k_values[-1] >= n:
        raise ValueError(f"every k must lie in [1, {n - 1}]")
    ids, _ = knn_table(x, x, k_values[-1], exclude_self=True)
    hits = labels[ids] == labels[:, None]
    first = np.where(hits.any(axis=1), hits.argmax(axis=1), n)
    return {k: float((first < k).mean()) for k in k_values}


def accuracy(predicted, labels) -> float:
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if predicted.shape != labels.shape:
        raise ValueError("length mismatch")
    return float((predicted == labels).mean()) if len(labels) else 0.0


def split_transfer(labels, fraction: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """First ``ceil(fraction * C)`` classes (by id) train, the rest test."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    classes = np.unique(np.asarray(labels))
    if len(classes) < 2:
        raise ValueError("need at least two classes to split")
    n_train = min(max(math.ceil(round(fraction * len(classes), 9)), 1), len(classes) - 1)
    return classes[:n_train], classes[n_train:]


def clustering_nmi(embeddings, labels, seed=0, restarts: int = 10) -> float:
    """NMI of a k-means clustering with one cluster per distinct label."""
    k = len(np.unique(labels))
    return nmi(kmeans(embeddings, k, seed=seed, restarts=restarts), labels)
