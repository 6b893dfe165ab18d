import math

import numpy as np
import pytest

from nnkernel.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from nnkernel.config import RunConfig, ValidationError
from nnkernel.data import Dataset, assign_splits
from nnkernel.kernel import CentreBank
from nnkernel.metrics import recall_at_k
from nnkernel.mlp import forward, identity_model
from nnkernel.synthetic import blobs, transfer_task
from nnkernel.training import embed, enroll, evaluate, format_report, predict_classes, train, tune_sigma

from oracles import direct_class_probs

SMALL = dict(hidden_sizes=[8], embedding_dim=2, epochs=5, batch_size=10, k_train=20, update_interval=1.0)


def blob_dataset(separation=4.0, noise=0.5, per_class=40, seed=0, test=0.0):
    x, y = blobs(2, per_class, 2, separation, noise, seed)
    return assign_splits(Dataset(x, y), 0.25, test, seed=seed)


def params_equal(a, b):
    return all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


class TestTrain:
    def test_two_blobs_reach_perfect_val_recall(self):
        ds = blob_dataset()
        cfg = RunConfig(hidden_sizes=[], embedding_dim=2, epochs=20, k_train=20, update_interval=1.0)
        ckpt = train(cfg, ds).checkpoint
        x_val, y_val = ds.subset("val")
        assert recall_at_k(embed(ckpt.model, x_val), y_val, [1])[1] == 1.0

    def test_no_op_ablation_is_bit_identical(self):
        ds = blob_dataset()
        cfg = RunConfig(freeze_network=True, learn_kernel_weights=False, **SMALL)
        from nnkernel.training import build_model
        model = build_model(cfg, 2, 2)
        before = model.copy()
        ckpt = train(cfg, ds, model=model).checkpoint
        assert params_equal(before, model)
        # the checkpoint stores float32, so it equals the untouched parameters rounded once
        assert all(np.array_equal(p.astype(np.float32), q) for p, q in zip(before.parameters(), ckpt.model.parameters()))
        assert np.all(ckpt.bank.weights == 1.0)

    def test_frozen_network_learns_weights(self):
        cfg = RunConfig(freeze_network=True, learn_kernel_weights=True, **SMALL)
        ckpt = train(cfg, blob_dataset(noise=1.5)).checkpoint
        assert not np.all(ckpt.bank.weights == 1.0)

    def test_seeded_runs_identical(self):
        ds = blob_dataset()
        cfg = RunConfig(dropout=0.2, seed=3, **SMALL)
        a, b = train(cfg, ds), train(cfg, ds)
        assert a.history == b.history
        assert params_equal(a.checkpoint.model, b.checkpoint.model)
        c = train(cfg.replace(seed=4), ds)
        assert c.history != a.history

    def test_refresh_schedule(self):
        ds = blob_dataset()
        # 60 train examples, batch 10 -> 6 steps per epoch; half-epoch interval refreshes every 3 steps
        result = train(RunConfig(**{**SMALL, "update_interval": 0.5}), ds)
        epochs = [r["epoch"] for r in result.refreshes]
        assert epochs == [0.0] + [0.5 * i for i in range(1, 11)]
        assert [r["version"] for r in result.refreshes] == list(range(1, 12))
        assert all(r["mean_distance"] >= 0 and 0 < r["mean_kernel"] <= 1 for r in result.refreshes)

    def test_loss_decreases_at_small_rate(self):
        ds = blob_dataset(noise=1.0)
        cfg = RunConfig(learning_rate=0.002, dropout_active=False, **SMALL)
        losses = train(cfg, ds).train_losses
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_divergence_aborts(self):
        from nnkernel.training import TrainingDiverged
        cfg = RunConfig(learning_rate=1e6, **SMALL)
        with pytest.raises(TrainingDiverged):
            train(cfg, blob_dataset())

    def test_requires_train_split(self):
        ds = Dataset(np.zeros((4, 2)), [0, 1, 0, 1], np.array(["val"] * 4))
        with pytest.raises(ValidationError):
            train(RunConfig(**SMALL), ds)

    def test_softmax_baseline_runs(self):
        cfg = RunConfig(loss="softmax", **{**SMALL, "epochs": 30})
        ckpt = train(cfg, blob_dataset(test=0.2)).checkpoint
        assert ckpt.model.head is not None
        assert evaluate(ckpt, blob_dataset(test=0.2))["accuracy"] > 0.9


def val_loss_oracle(x_train, y_train, x_val, y_val, sigma):
    total = 0.0
    for x, y in zip(x_val, y_val):
        p = direct_class_probs(x, x_train, y_train, np.ones(len(y_train)), sigma)
        total -= math.log(max(p[y], 1e-30))
    return total / len(y_val)


class TestTuneSigma:
    def test_single_value(self):
        assert tune_sigma(RunConfig(**SMALL), blob_dataset(), [0.7]) == 0.7

    def test_duplicates(self):
        ds = blob_dataset()
        grid = [0.5, 1.0, 2.0]
        assert tune_sigma(RunConfig(**SMALL), ds, grid + grid[::-1]) == tune_sigma(RunConfig(**SMALL), ds, grid)

    @pytest.mark.parametrize("grid", [[], [1.0, -1.0]])
    def test_bad_grid(self, grid):
        with pytest.raises(ValidationError):
            tune_sigma(RunConfig(**SMALL), blob_dataset(), grid)

    def test_needs_val(self):
        x, y = blobs(2, 10)
        with pytest.raises(ValidationError):
            tune_sigma(RunConfig(**SMALL), Dataset(x, y), [1.0])

    @pytest.mark.parametrize("separation, noise", [(2.0, 1.0), (4.0, 1.0), (3.0, 0.7)])
    def test_matches_exhaustive_grid(self, separation, noise):
        ds = blob_dataset(separation, noise, per_class=30)
        grid = list(np.geomspace(0.05, 10, 25))
        cfg = RunConfig(k_train=1000)
        x_train, y_train = ds.subset("train")
        x_val, y_val = ds.subset("val")
        losses = [val_loss_oracle(x_train, y_train, x_val, y_val, s) for s in grid]
        chosen = tune_sigma(cfg, ds, grid, model=identity_model(2))
        # equal up to rounding: near-zero losses can tie between neighbouring grid points
        assert losses[grid.index(chosen)] <= min(losses) + 1e-12 * max(1.0, min(losses))

    def test_tie_goes_to_smaller(self):
        # With a single training example per class nothing depends on sigma
        # except via the relative distances, which are equal here.
        x = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        ds = Dataset(x, [0, 1, 0, 1], np.array(["train", "train", "val", "val"]))
        assert tune_sigma(RunConfig(k_train=10), ds, [3.0, 1.0, 2.0], model=identity_model(2)) == 1.0


def manual_bank():
    centres = np.array([[0.0, 0.0], [0.2, 0.0], [5.0, 0.0], [5.0, 0.3], [0.0, 5.0]])
    return CentreBank(centres, [0, 0, 1, 1, 2], np.ones(5), version=1)


class TestEvaluate:
    def test_accuracy_matches_manual_count(self):
        ckpt = Checkpoint(RunConfig(hidden_sizes=[], embedding_dim=2, k_train=5), identity_model(2), manual_bank())
        # nearest blobs: 0, 1, 2, 1 (wrong), 0 (wrong), 2
        x = np.array([[0.1, 0.1], [4.8, 0.0], [0.2, 4.7], [4.0, 0.5], [0.4, 0.3], [-0.5, 6.0]])
        y = [0, 1, 2, 0, 2, 2]
        ds = Dataset(x, y, np.array(["test"] * 6))
        assert predict_classes(ckpt, x).tolist() == [0, 1, 2, 1, 0, 2]
        assert evaluate(ckpt, ds)["accuracy"] == 4 / 6

    def test_single_class_bank(self):
        rng = np.random.default_rng(0)
        bank = CentreBank(rng.standard_normal((10, 3)), np.zeros(10, int), np.ones(10))
        ckpt = Checkpoint(RunConfig(hidden_sizes=[], embedding_dim=3), identity_model(3), bank)
        ds = Dataset(rng.standard_normal((7, 3)) * 50, np.zeros(7, int), np.array(["test"] * 7))
        assert evaluate(ckpt, ds)["accuracy"] == 1.0

    def test_all_centres_equals_direct(self):
        rng = np.random.default_rng(1)
        centres = rng.standard_normal((40, 3))
        labels = rng.integers(0, 4, 40)
        labels[:4] = np.arange(4)
        weights = rng.uniform(0.5, 2.0, 40)
        cfg = RunConfig(hidden_sizes=[], embedding_dim=3, k_train=40, sigma=0.6)
        ckpt = Checkpoint(cfg, identity_model(3), CentreBank(centres, labels, weights))
        queries = rng.standard_normal((25, 3))
        expected = [int(np.argmax(direct_class_probs(q, ckpt.bank.centres, labels, ckpt.bank.weights, 0.6)))
                    for q in queries]
        assert predict_classes(ckpt, queries).tolist() == expected

    def test_transfer_report(self):
        ds = transfer_task(n_classes=6, per_class=20, input_dim=8, latent_dim=4, seed=0)
        cfg = RunConfig(hidden_sizes=[8], embedding_dim=4, epochs=2, k_train=20)
        ckpt = train(cfg, ds).checkpoint
        report = evaluate(ckpt, ds, "transfer")
        assert set(report["table"]) == {"R@1", "R@2", "R@4", "R@8", "NMI"}
        assert set(report["recall"]) == {"1", "2", "4", "8"}
        assert 0 <= report["nmi"] <= 1
        assert "R@1" in format_report(report)

    def test_transfer_overlap_rejected(self):
        ds = blob_dataset(test=0.2)
        ckpt = train(RunConfig(**SMALL), ds).checkpoint
        with pytest.raises(ValidationError, match="overlap"):
            evaluate(ckpt, ds, "transfer")

    def test_dimension_mismatch(self):
        ckpt = Checkpoint(RunConfig(hidden_sizes=[], embedding_dim=2), identity_model(2), manual_bank())
        with pytest.raises(ValidationError):
            evaluate(ckpt, Dataset(np.zeros((2, 3)), [0, 1], np.array(["test"] * 2)))

    def test_bad_mode(self):
        ckpt = Checkpoint(RunConfig(hidden_sizes=[], embedding_dim=2), identity_model(2), manual_bank())
        with pytest.raises(ValidationError):
            evaluate(ckpt, Dataset(np.zeros((2, 2)), [0, 1], np.array(["test"] * 2)), "ranking")

    @pytest.mark.parametrize("mode", ["classification", "transfer"])
    def test_checkpoint_round_trip_reports(self, tmp_path, mode):
        if mode == "transfer":
            ds = transfer_task(n_classes=6, per_class=20, input_dim=8, latent_dim=4, seed=1)
        else:
            ds = blob_dataset(test=0.2)
        cfg = RunConfig(hidden_sizes=[6], embedding_dim=3, epochs=2, k_train=15, dropout=0.1)
        ckpt = train(cfg, ds).checkpoint
        save_checkpoint(ckpt, tmp_path / "c.nnkc")
        assert evaluate(load_checkpoint(tmp_path / "c.nnkc"), ds, mode) == evaluate(ckpt, ds, mode)


class TestEnroll:
    def test_appends_without_touching_network(self):
        bank = manual_bank()
        ckpt = Checkpoint(RunConfig(hidden_sizes=[], embedding_dim=2), identity_model(2), bank)
        new = enroll(ckpt, np.array([[-5.0, -5.0], [-5.2, -5.0]]), [3, 3])
        assert new.bank.size == 7
        assert new.bank.version == bank.version + 1
        np.testing.assert_array_equal(new.bank.weights[-2:], [1.0, 1.0])
        assert params_equal(new.model, ckpt.model)
        assert predict_classes(new, np.array([[-5.1, -4.9], [0.0, 0.1]])).tolist() == [3, 0]
