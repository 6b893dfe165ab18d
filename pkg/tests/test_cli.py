import json
import subprocess
import sys

import numpy as np
import pytest

from nnkernel.ann import load_graph
from nnkernel.checkpoint import load_checkpoint
from nnkernel.cli import main
from nnkernel.data import Dataset, write_csv, write_nnkf
from nnkernel.synthetic import blobs, transfer_task

FAST = ["--hidden-sizes", "8", "--embedding-dim", "2", "--epochs", "3", "--k-train", "20", "--seed", "1"]


def json_lines(out):
    return [json.loads(line) for line in out.splitlines() if line.startswith("{")]


@pytest.fixture
def blob_csv(tmp_path):
    x, y = blobs(3, 30, 2, separation=5.0, noise=0.5, seed=0)
    path = tmp_path / "blobs.csv"
    write_csv(Dataset(x, y), path)
    return path


@pytest.fixture
def trained(tmp_path, blob_csv, capsys):
    out = tmp_path / "model.nnkc"
    assert main(["train", "--data", str(blob_csv), "--output", str(out), *FAST]) == 0
    capsys.readouterr()
    return out


def test_train_reports_accuracy(tmp_path, blob_csv, capsys):
    report = tmp_path / "r.json"
    code = main(["train", "--data", str(blob_csv), "--output", str(tmp_path / "m"), "--report", str(report), *FAST])
    assert code == 0
    out = capsys.readouterr().out
    assert "Accuracy" in out
    assert json.loads(report.read_text())["accuracy"] > 0.9
    assert load_checkpoint(tmp_path / "m").config.epochs == 3


def test_evaluate_matches_train_report(trained, blob_csv, capsys):
    assert main(["evaluate", "--checkpoint", str(trained), "--data", str(blob_csv)]) == 0
    first = json_lines(capsys.readouterr().out)[0]
    assert main(["evaluate", "--checkpoint", str(trained), "--data", str(blob_csv)]) == 0
    assert json_lines(capsys.readouterr().out)[0] == first
    assert set(first) == {"mode", "n", "accuracy"}


def test_evaluate_all_rows(trained, blob_csv, capsys):
    assert main(["evaluate", "--checkpoint", str(trained), "--data", str(blob_csv), "--all-rows"]) == 0
    assert json_lines(capsys.readouterr().out)[0]["n"] == 90


def test_transfer_protocol(tmp_path, capsys):
    ds = transfer_task(n_classes=6, per_class=20, input_dim=8, latent_dim=4, seed=0)
    path = tmp_path / "t.nnkf"
    write_nnkf(Dataset(ds.features, ds.labels), path)
    code = main(["train", "--data", str(path), "--protocol", "transfer", "--transfer-fraction", "0.5",
                 "--output", str(tmp_path / "m"), *FAST])
    assert code == 0
    report = json_lines(capsys.readouterr().out)[0]
    assert set(report["table"]) == {"R@1", "R@2", "R@4", "R@8", "NMI"}


def test_tune_sigma(blob_csv, capsys):
    assert main(["tune-sigma", "--data", str(blob_csv), "--grid", "0.5", "1", "2", "--hidden-sizes", "4"]) == 0
    assert json_lines(capsys.readouterr().out)[0]["sigma"] in (0.5, 1.0, 2.0)


def test_index_build(tmp_path, blob_csv, capsys):
    out = tmp_path / "g.nnkg"
    assert main(["index-build", "--data", str(blob_csv), "--max-degree", "8", "--output", str(out)]) == 0
    info = json_lines(capsys.readouterr().out)[0]
    index = load_graph(out)
    assert index.node_count == info["nodes"] == 90
    assert all(len(a) <= 8 for a in index.adjacency)


def test_diagnose(trained, blob_csv, capsys):
    assert main(["diagnose", "--checkpoint", str(trained), "--k", "5"]) == 0
    info = json_lines(capsys.readouterr().out)[0]
    assert info["k"] == 5 and 0 < info["mean_kernel"] <= 1
    assert main(["diagnose", "--checkpoint", str(trained), "--data", str(blob_csv)]) == 0
    assert json_lines(capsys.readouterr().out)[0]["k"] < 90


def test_enroll(tmp_path, trained, capsys):
    x = np.random.default_rng(0).normal([-8.0, 8.0], 0.3, (10, 2))
    new = tmp_path / "new.csv"
    write_csv(Dataset(x, np.zeros(10, int), label_names=["novel"]), new)
    out = tmp_path / "enrolled.nnkc"
    assert main(["enroll", "--checkpoint", str(trained), "--data", str(new), "--output", str(out)]) == 0
    info = json_lines(capsys.readouterr().out)[0]
    assert info["classes"] == 4 and info["new_labels"] == {"novel": 3}
    before, after = load_checkpoint(trained), load_checkpoint(out)
    assert after.bank.size == before.bank.size + 10
    assert after.bank.version == before.bank.version + 1


def test_flags_override_config(tmp_path, blob_csv):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 7, "sigma": 3.0, "hidden_sizes": [8], "embedding_dim": 2}))
    out = tmp_path / "m"
    assert main(["train", "--config", str(cfg), "--data", str(blob_csv), "--epochs", "2", "--output", str(out)]) == 0
    saved = load_checkpoint(out).config
    assert saved.epochs == 2 and saved.sigma == 3.0


@pytest.mark.parametrize("argv", [
    ["train"],
    ["train", "--data", "missing.csv"],
    ["train", "--data", "{csv}", "--sigma", "-1"],
    ["evaluate", "--checkpoint", "missing", "--data", "{csv}"],
    ["tune-sigma", "--data", "{csv}", "--grid", "-1"],
    ["index-build", "--output", "x"],
])
def test_validation_errors_exit_2(argv, blob_csv, capsys):
    argv = [a.replace("{csv}", str(blob_csv)) for a in argv]
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, blob_csv):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"learning_rat": 0.1}))
    assert main(["train", "--config", str(cfg), "--data", str(blob_csv)]) == 2


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--epochs", "many"])
    assert exc.value.code == 2


def test_console_script(tmp_path, blob_csv):
    proc = subprocess.run([sys.executable, "-m", "nnkernel.cli", "index-build", "--data", str(blob_csv),
                           "--output", str(tmp_path / "g")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
