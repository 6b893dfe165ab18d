# Weighted Gaussian kernel classifier on a hand-made centre bank.
import numpy as np
from nnkernel import CentreBank, KernelConfig, classify, nnk_loss, nnk_loss_backward
from nnkernel.ann import brute_force_knn

rng = np.random.default_rng(0)

# three classes, 20 centres each, in 2-D
means = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]])
labels = np.repeat(np.arange(3), 20)
centres = means[labels] + 0.6 * rng.standard_normal((60, 2))
bank = CentreBank(centres, labels, np.ones(60))
cfg = KernelConfig(sigma=0.8)

x = np.array([1.2, 0.4])
print("all centres:      ", classify(x, bank, np.arange(60), cfg).round(4))

# only the nearest few centres matter; the rest contribute almost nothing
for k in (3, 10, 30):
    nbrs = [i for i, _ in brute_force_knn(x, centres, k)]
    print(f"{k:2d} nearest centres:", classify(x, bank, nbrs, cfg).round(4))

# a training example never uses its own centre
i = 5
nbrs = [j for j, _ in brute_force_knn(centres[i], centres, 10, exclude=i)]
print("leave-one-out probs for centre 5:", classify(centres[i], bank, nbrs, cfg, self_id=i).round(4))

# loss and gradients, with respect to the embedding and each neighbour's weight
loss, grads = nnk_loss_backward(x, 1, bank, np.arange(60), cfg)
print("loss", round(loss, 4), "d/dx", grads.d_embedding.round(4))
top = sorted(grads.d_weights.items(), key=lambda kv: abs(kv[1]), reverse=True)[:3]
print("largest weight gradients:", [(j, round(g, 4)) for j, g in top])

# upweighting the class-1 centres raises p(class 1)
w = np.where(labels == 1, 3.0, 1.0)
print("class-1 weights x3:", classify(x, bank.with_weights(w), np.arange(60), cfg).round(4))
print("loss before / after:", round(nnk_loss(x, 1, bank, np.arange(60), cfg), 4),
      round(nnk_loss(x, 1, bank.with_weights(w), np.arange(60), cfg), 4))
