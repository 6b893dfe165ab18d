# Add a class after training by appending its embeddings to the bank.
import numpy as np
from nnkernel import RunConfig, enroll, train
from nnkernel.synthetic import classification_task
from nnkernel.training import predict_classes

full = classification_task(n_classes=11, n_train=550, n_test=220, seed=0)
old = full.select(full.labels < 10)
cfg = RunConfig(hidden_sizes=[64], embedding_dim=16, dropout=0.1, learning_rate=0.05, sigma=2.0,
                update_interval=5, k_train=100, epochs=60)
ckpt = train(cfg, old).checkpoint
print("bank:", ckpt.bank.size, "centres,", ckpt.bank.n_classes, "classes, version", ckpt.bank.version)

x_test, y_test = full.subset("test")
pred = predict_classes(ckpt, x_test)
print("before: old-class accuracy", np.mean(pred[y_test < 10] == y_test[y_test < 10]),
      "| class 10 is always wrong:", np.mean(pred[y_test == 10] == 10))

# labelled examples of the new class, no gradient steps; more examples, better coverage
new = (full.labels == 10) & (full.split != "test")
for n in (5, 10, int(new.sum())):
    ckpt2 = enroll(ckpt, full.features[new][:n], full.labels[new][:n])
    pred = predict_classes(ckpt2, x_test)
    print(f"enrolled {n:2d}: old-class accuracy", np.mean(pred[y_test < 10] == y_test[y_test < 10]),
          "| class 10 accuracy", np.mean(pred[y_test == 10] == 10))
print("bank:", ckpt2.bank.size, "centres, version", ckpt2.bank.version)
