import numpy as np
import pytest

from nnkernel.ann import brute_force_knn
from nnkernel.bank import CentreStore, NeighbourTable, UpdateSchedule, diagnostics, refresh
from nnkernel.kernel import CentreBank, KernelConfig, classify
from nnkernel.mlp import Layer, MlpModel, identity_model, init_mlp, sgd_step, TrainConfig

from oracles import direct_class_probs


@pytest.fixture
def points():
    rng = np.random.default_rng(0)
    return rng.standard_normal((60, 4)), rng.integers(0, 3, 60)


def test_identity_refresh_copies_features(points):
    x, y = points
    bank, table, _ = refresh(identity_model(4), x, y, UpdateSchedule(k_train=10))
    np.testing.assert_array_equal(bank.centres, x)
    assert bank.version == 1
    assert table.bank_version == 1
    assert all(i not in row for i, row in enumerate(table.rows))


def test_refresh_rows_match_brute_force():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((500, 6))
    y = rng.integers(0, 5, 500)
    _, table, _ = refresh(identity_model(6), x, y, UpdateSchedule(k_train=100))
    for i in range(0, 500, 37):
        assert table.rows[i].tolist() == [j for j, _ in brute_force_knn(x[i], x, 100, exclude=i)]


def test_refresh_drops_dropout():
    rng = np.random.default_rng(2)
    model = init_mlp(4, [8], 3, dropout=0.5, rng=3)
    x = rng.standard_normal((20, 4))
    bank, _, _ = refresh(model, x, np.arange(20) % 2, UpdateSchedule(k_train=5))
    clean = x
    for layer in model.layers:
        clean = clean @ layer.weight.T + layer.bias
        clean = np.maximum(clean, 0) if layer.activation == "relu" else clean
    np.testing.assert_allclose(bank.centres, clean, rtol=1e-12)


def test_refresh_dimension_mismatch(points):
    x, y = points
    with pytest.raises(ValueError):
        refresh(identity_model(3), x, y, UpdateSchedule())


def test_weights_carry_over_and_version_increments(points):
    x, y = points
    store = CentreStore(x, y, UpdateSchedule(k_train=8))
    store.refresh(identity_model(4))
    w = np.linspace(0.5, 2.0, 60)
    store.set_weights(w)
    assert store.bank.version == 1
    store.refresh(identity_model(4))
    np.testing.assert_array_equal(store.bank.weights, w)
    assert store.bank.version == 2 == store.table.bank_version


def test_frozen_between_refreshes(points):
    x, y = points
    model = init_mlp(4, [6], 3, rng=0)
    store = CentreStore(x, y, UpdateSchedule(k_train=8))
    store.refresh(model)
    centres, rows = store.bank.centres.copy(), store.table.rows.copy()
    before = store.neighbours_for(5).copy()
    # network and kernel weights move; the snapshot does not
    sgd_step(model, None, [np.ones_like(p) for p in model.parameters()], TrainConfig(learning_rate=0.5))
    store.set_weights(store.bank.weights * 3)
    np.testing.assert_array_equal(store.bank.centres, centres)
    np.testing.assert_array_equal(store.table.rows, rows)
    np.testing.assert_array_equal(store.neighbours_for(5), before)


def test_neighbours_for_errors(points):
    x, y = points
    store = CentreStore(x, y, UpdateSchedule(k_train=8))
    with pytest.raises(RuntimeError):
        store.neighbours_for(0)
    store.refresh(identity_model(4))
    with pytest.raises(IndexError):
        store.neighbours_for(60)


def test_query_neighbours_on_demand(points):
    x, y = points
    store = CentreStore(x, y, UpdateSchedule(k_train=7))
    store.refresh(identity_model(4))
    q = np.array([0.1, -0.2, 0.3, 0.0])
    assert store.neighbours_for_query(q).tolist() == [j for j, _ in brute_force_knn(q, x, 7)]


def test_graph_mode_refresh_excludes_self():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((300, 5))
    store = CentreStore(x, np.arange(300) % 4, UpdateSchedule(k_train=10), exact_threshold=100)
    store.refresh(identity_model(5))
    assert not store.index.exact
    assert all(i not in row for i, row in enumerate(store.table.rows))


def test_leave_one_out_behaviour(points):
    x, y = points
    store = CentreStore(x, y, UpdateSchedule(k_train=59))
    store.refresh(identity_model(4))
    cfg = KernelConfig(sigma=0.8)
    for i in (0, 13, 42):
        got = classify(x[i], store.bank, store.neighbours_for(i), cfg, self_id=i)
        others = [j for j in range(60) if j != i]
        np.testing.assert_allclose(got, direct_class_probs(x[i], x, y, np.ones(60), 0.8, others, 3), atol=1e-12)


def test_table_rejects_self():
    with pytest.raises(ValueError):
        NeighbourTable(np.array([[1], [1]]), 0)


@pytest.mark.parametrize("kwargs", [dict(update_interval=0), dict(k_train=0)])
def test_bad_schedule(kwargs):
    with pytest.raises(ValueError):
        UpdateSchedule(**kwargs)


def test_interval_steps():
    assert UpdateSchedule(update_interval=10).interval_steps(50) == 500
    assert UpdateSchedule(update_interval=0.5).interval_steps(3) == 2
    assert UpdateSchedule(update_interval=0.01).interval_steps(3) == 1


class TestDiagnostics:
    def test_identical_centres(self):
        bank = CentreBank(np.ones((5, 3)), [0, 0, 1, 1, 1], np.ones(5), version=2)
        table = NeighbourTable(np.array([[1, 2], [0, 2], [0, 1], [0, 1], [0, 1]]), 2)
        assert diagnostics(bank, table, 1.0) == (0.0, 1.0)

    def test_wide_kernel(self):
        rng = np.random.default_rng(5)
        bank, table, _ = refresh(identity_model(3), rng.standard_normal((30, 3)), np.arange(30) % 3, UpdateSchedule(k_train=5))
        _, kval = diagnostics(bank, table, 1e6)
        assert kval == pytest.approx(1.0, abs=1e-10)

    def test_direct(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((200, 4))
        bank, table, _ = refresh(identity_model(4), x, np.arange(200) % 4, UpdateSchedule(k_train=20))
        dist, kval = diagnostics(bank, table, 1.3)
        d, kv = [], []
        for i in range(200):
            for j in table.rows[i]:
                r = np.sqrt(((x[i] - x[j]) ** 2).sum())
                d.append(r)
                kv.append(np.exp(-r * r / (2 * 1.3**2)))
        assert dist == pytest.approx(np.mean(d), rel=1e-12)
        assert kval == pytest.approx(np.mean(kv), rel=1e-12)

    def test_version_mismatch(self):
        bank = CentreBank(np.eye(2), [0, 1], [1.0, 1.0], version=3)
        with pytest.raises(ValueError):
            diagnostics(bank, NeighbourTable(np.array([[1], [0]]), 2), 1.0)
