# The command-line tool end to end, driven from Python.
import json
import os
import subprocess
import tempfile

from nnkernel.data import Dataset, write_nnkf
from nnkernel.synthetic import latent_mixture

work = tempfile.mkdtemp()
x, y = latent_mixture(6, 60, input_dim=16, latent_dim=6, seed=0)
data = os.path.join(work, "data.nnkf")
write_nnkf(Dataset(x, y), data)


def run(*args):
    print("$ nnkernel", " ".join(args))
    out = subprocess.run(["nnkernel", *args], capture_output=True, text=True)
    print(out.stdout.strip() or out.stderr.strip(), f"[exit {out.returncode}]\n")
    return out


conf = os.path.join(work, "run.json")
with open(conf, "w") as fh:
    json.dump({"hidden_sizes": [32], "embedding_dim": 8, "epochs": 60, "learning_rate": 0.05, "dropout": 0.1}, fh)

run("tune-sigma", "--config", conf, "--data", data, "--grid", "0.5", "1", "2", "4")
ckpt = os.path.join(work, "model.nnkc")
run("train", "--config", conf, "--data", data, "--sigma", "2", "--output", ckpt)
run("evaluate", "--checkpoint", ckpt, "--data", data)
run("diagnose", "--checkpoint", ckpt, "--k", "20")
run("index-build", "--checkpoint", ckpt, "--max-degree", "16", "--output", os.path.join(work, "bank.nnkg"))

x_new, _ = latent_mixture(1, 20, input_dim=16, latent_dim=6, seed=7, mixing_seed=0)
new = os.path.join(work, "new.nnkf")
write_nnkf(Dataset(x_new, [0] * 20, label_names=[6]), new)
run("enroll", "--checkpoint", ckpt, "--data", new, "--output", os.path.join(work, "enrolled.nnkc"))

# bad input exits with status 2
run("train", "--data", data, "--sigma", "-1")
