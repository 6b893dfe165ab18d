"""Small fully connected embedding network with hand-written backprop.

Stands in for a CNN backbone.  The last layer is linear (no ReLU) and may use
dropout, matching an FC7-style embedding.  Dropout is inverted, so stored
centres computed without dropout share scale with training activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .kernel import WEIGHT_FLOOR


@dataclass
class Layer:
    weight: np.ndarray  # out x in
    bias: np.ndarray
    activation: str = "none"
    dropout: float = 0.0

    def __post_init__(self):
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("bias length must equal layer output size")


@dataclass
class MlpModel:
    layers: List[Layer]
    head: Optional[Layer] = None
    step: int = 0  # bumped by every parameter update; guards against stale caches

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weight.shape[1] != a.weight.shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")
        if self.layers and self.layers[-1].activation != "none":
            raise ValueError("the embedding layer must be linear")
        if self.head is not None and self.head.weight.shape[1] != self.embedding_dim:
            raise ValueError("softmax head does not match the embedding size")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def embedding_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def parameters(self) -> List[np.ndarray]:
        params = []
        for layer in self.all_layers():
            params += [layer.weight, layer.bias]
        return params

    def all_layers(self) -> List[Layer]:
        return self.layers + ([self.head] if self.head is not None else [])

    def copy(self) -> "MlpModel":
        copy_layer = lambda l: Layer(l.weight.copy(), l.bias.copy(), l.activation, l.dropout)
        head = copy_layer(self.head) if self.head is not None else None
        return MlpModel([copy_layer(l) for l in self.layers], head, self.step)


def init_mlp(input_dim: int, hidden: Sequence[int], embedding_dim: int, dropout: float = 0.0,
             n_classes: Optional[int] = None, rng=None) -> MlpModel:
    """Xavier-uniform weights, zero biases.  Dropout applies to every layer."""
    rng = np.random.default_rng(rng)
    sizes = [input_dim, *hidden, embedding_dim]

    def xavier(n_out, n_in):
        limit = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-limit, limit, size=(n_out, n_in))

    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        act = "relu" if i < len(sizes) - 2 else "none"
        layers.append(Layer(xavier(n_out, n_in), np.zeros(n_out), act, dropout))
    head = None
    if n_classes is not None:
        head = Layer(xavier(n_classes, embedding_dim), np.zeros(n_classes), "none", 0.0)
    return MlpModel(layers, head)


def identity_model(dim: int) -> MlpModel:
    return MlpModel([Layer(np.eye(dim), np.zeros(dim))])


@dataclass
class ForwardCache:
    inputs: List[np.ndarray] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)
    masks: List[Optional[np.ndarray]] = field(default_factory=list)
    step: int = 0
    n_layers: int = 0


def forward(model: MlpModel, x, dropout_active: bool = False, rng=None, use_head: bool = False):
    """Run the network; returns ``(output, cache)``.

    ``rng`` seeds the dropout masks, so identical seeds give identical outputs.
    With ``use_head`` the softmax-head logits are returned instead of the
    embedding.
    """
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != model.input_dim:
        raise ValueError(f"expected inputs of shape (n, {model.input_dim}), got {h.shape}")
    gen = np.random.default_rng(rng) if dropout_active else None
    layers = model.all_layers() if use_head else model.layers
    cache = ForwardCache(step=model.step, n_layers=len(layers))
    for i, layer in enumerate(layers):
        cache.inputs.append(h)
        z = h @ layer.weight.T + layer.bias
        cache.pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        is_head = use_head and i == len(layers) - 1
        if dropout_active and layer.dropout > 0 and not is_head:
            keep = 1.0 - layer.dropout
            mask = (gen.random(h.shape) < keep) / keep
            h = h * mask
            cache.masks.append(mask)
        else:
            cache.masks.append(None)
    return h, cache


def backward(model: MlpModel, cache: ForwardCache, upstream) -> List[np.ndarray]:
    """Parameter gradients in ``model.parameters()`` order (head omitted if unused)."""
    if cache.step != model.step:
        raise RuntimeError("forward cache is stale: parameters changed since the forward pass")
    layers = model.all_layers()[: cache.n_layers]
    g = np.asarray(upstream, dtype=np.float64)
    grads: List[np.ndarray] = []
    for i in reversed(range(len(layers))):
        layer = layers[i]
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        if layer.activation == "relu":
            g = g * (cache.pre[i] > 0)
        grads = [g.T @ cache.inputs[i], g.sum(axis=0)] + grads
        if i:
            g = g @ layer.weight
    return grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 20
    weight_decay: float = 0.0002
    epochs: int = 50
    seed: int = 0
    learn_kernel_weights: bool = True
    freeze_network: bool = False
    dropout_active: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def sgd_step(model: MlpModel, kernel_weights, grads, config: TrainConfig, weight_grads=None):
    """One plain SGD update.

    Network parameters get ``p -= lr * (g + wd * p)`` in place unless the
    network is frozen.  Kernel weights get no weight decay and are projected
    back to at least ``WEIGHT_FLOOR``.  Returns the new kernel weights.
    """
    if not config.freeze_network and grads is not None:
        params = model.parameters()[: len(grads)]
        for p, g in zip(params, grads):
            p -= config.learning_rate * (g + config.weight_decay * p)
        model.step += 1
    if kernel_weights is None:
        return None
    w = np.array(kernel_weights, dtype=np.float64)
    if config.learn_kernel_weights and weight_grads is not None:
        w = np.maximum(w - config.learning_rate * np.asarray(weight_grads), WEIGHT_FLOOR)
    return w


def softmax_head_loss(model: MlpModel, x, labels, dropout_active: bool = False, rng=None):
    """Mean cross-entropy of the softmax head and the parameter gradients."""
    if model.head is None:
        raise ValueError("model has no softmax head")
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = model.head.weight.shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    logits, cache = forward(model, x, dropout_active, rng, use_head=True)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -log_probs[np.arange(n), labels].mean()
    d_logits = np.exp(log_probs)
    d_logits[np.arange(n), labels] -= 1.0
    return float(loss), backward(model, cache, d_logits / n)
