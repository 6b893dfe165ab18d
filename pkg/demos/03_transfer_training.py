# Train on ten classes, cluster and retrieve ten classes never seen in training.
import logging
import numpy as np
from nnkernel import RunConfig, evaluate, train
from nnkernel.synthetic import transfer_task
from nnkernel.training import format_report

logging.basicConfig(level=logging.WARNING)

ds = transfer_task(n_classes=20, per_class=100, input_dim=32, seed=0)
print("splits:", {s: int((ds.split == s).sum()) for s in ("train", "val", "test")})
print("train classes", np.unique(ds.labels[ds.split == "train"]).tolist(), "test classes", np.unique(ds.labels[ds.split == "test"]).tolist())

cfg = RunConfig(hidden_sizes=[64], embedding_dim=16, dropout=0.1, learning_rate=0.05,
                update_interval=5, k_train=100, epochs=60, seed=0)
result = train(cfg, ds)

# every refresh re-embeds the training set and reports how spread out the neighbours are
for r in result.refreshes[::3]:
    print(f"refresh v{r['version']:2d} @ epoch {r['epoch']:5.1f}: "
          f"mean distance {r['mean_distance']:.3f}, mean kernel {r['mean_kernel']:.3f}")
print("val loss by epoch:", np.round([h["val_loss"] for h in result.history[::10]], 3))

print(format_report(evaluate(result.checkpoint, ds, "transfer")))

# the untrained network, for comparison
frozen = train(cfg.replace(freeze_network=True, learn_kernel_weights=False, epochs=1), ds)
print("untrained network:")
print(format_report(evaluate(frozen.checkpoint, ds, "transfer")))
