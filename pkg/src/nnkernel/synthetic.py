"""Synthetic stand-ins for image features.

Class structure lives in a low-dimensional latent subspace; the remaining
input directions carry large nuisance noise.  Everything is then rotated by
a random orthogonal matrix so the network has to learn which directions
matter.  Classes share the subspace, so what is learned on one set of
classes transfers to unseen ones.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset


def latent_mixture(n_classes: int, per_class: int, input_dim: int = 32, latent_dim: int = 9,
                   class_spread: float = 1.0, within_noise: float = 0.25, nuisance: float = 2.0,
                   seed=0, mixing_seed=None):
    """Features and labels for ``n_classes`` Gaussian classes.

    ``mixing_seed`` fixes the latent subspace and rotation independently of
    the class means, so extra classes can be drawn in the same space.
    """
    if latent_dim > input_dim:
        raise ValueError("latent_dim cannot exceed input_dim")
    rng = np.random.default_rng(seed)
    mix_rng = np.random.default_rng(seed if mixing_seed is None else mixing_seed)
    rotation, _ = np.linalg.qr(mix_rng.standard_normal((input_dim, input_dim)))
    scales = np.concatenate([np.full(latent_dim, within_noise), np.full(input_dim - latent_dim, nuisance)])
    means = np.zeros((n_classes, input_dim))
    means[:, :latent_dim] = class_spread * rng.standard_normal((n_classes, latent_dim))
    labels = np.repeat(np.arange(n_classes), per_class)
    latent = means[labels] + rng.standard_normal((len(labels), input_dim)) * scales
    return latent @ rotation.T, labels


def transfer_task(n_classes: int = 20, per_class: int = 100, input_dim: int = 32, seed=0, **kwargs) -> Dataset:
    """Disjoint-class task: first half of the classes train, second half test."""
    from .data import transfer_splits

    x, y = latent_mixture(n_classes, per_class, input_dim, seed=seed, **kwargs)
    return transfer_splits(Dataset(x, y), 0.5, val_fraction=0.1, seed=seed)


def classification_task(n_classes: int = 10, n_train: int = 500, n_test: int = 200, input_dim: int = 32,
                        val_fraction: float = 0.1, seed=0, **kwargs) -> Dataset:
    """Same classes in every split: ``n_train`` train (incl. val) and ``n_test`` test examples."""
    per_train, per_test = n_train // n_classes, n_test // n_classes
    x, y = latent_mixture(n_classes, per_train + per_test, input_dim, seed=seed, **kwargs)
    rng = np.random.default_rng(seed)
    split = np.empty(len(y), dtype="<U5")
    n_val = int(round(val_fraction * per_train))
    for c in range(n_classes):
        idx = rng.permutation(np.flatnonzero(y == c))
        split[idx[:per_test]] = "test"
        split[idx[per_test:per_test + n_val]] = "val"
        split[idx[per_test + n_val:]] = "train"
    return Dataset(x, y, split)


def blobs(n_classes: int = 2, per_class: int = 50, dim: int = 2, separation: float = 4.0, noise: float = 0.5, seed=0):
    """Isotropic Gaussian blobs with centres spaced ``separation`` apart on a line."""
    rng = np.random.default_rng(seed)
    centres = np.zeros((n_classes, dim))
    centres[:, 0] = separation * np.arange(n_classes)
    labels = np.repeat(np.arange(n_classes), per_class)
    return centres[labels] + noise * rng.standard_normal((len(labels), dim)), labels
