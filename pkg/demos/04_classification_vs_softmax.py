# Same network, two heads: the kernel classifier and a softmax layer.
import numpy as np
from nnkernel import RunConfig, evaluate, train, tune_sigma
from nnkernel.synthetic import classification_task

base = RunConfig(hidden_sizes=[64], embedding_dim=16, dropout=0.1, learning_rate=0.05,
                 update_interval=5, k_train=100, epochs=60)

rows = []
for seed in range(3):
    ds = classification_task(n_classes=10, n_train=500, n_test=200, seed=seed)
    cfg = base.replace(seed=seed)
    sigma = tune_sigma(cfg, ds, [0.5, 1.0, 2.0, 4.0])
    acc = {}
    # the ablation: nothing learned, only kernel weights, everything
    acc["frozen"] = evaluate(train(cfg.replace(sigma=sigma, freeze_network=True, learn_kernel_weights=False), ds).checkpoint, ds)["accuracy"]
    acc["weights"] = evaluate(train(cfg.replace(sigma=sigma, freeze_network=True), ds).checkpoint, ds)["accuracy"]
    acc["kernel"] = evaluate(train(cfg.replace(sigma=sigma), ds).checkpoint, ds)["accuracy"]
    acc["softmax"] = evaluate(train(cfg.replace(loss="softmax"), ds).checkpoint, ds)["accuracy"]
    print(f"seed {seed} sigma {sigma}:", acc)
    rows.append(list(acc.values()))

print("median", {k: float(v) for k, v in zip(acc, np.median(rows, axis=0))})
