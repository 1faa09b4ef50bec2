from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polycascade import gcn
from polycascade.container import ModelFormatError, UnsupportedVersionError
from polycascade.gcn import (
    GcnConfig,
    TapPoint,
    TrainOptions,
    cluster_count,
    diffpool_level,
    encode_graph,
    gcn_layer,
    init_model,
    node_features,
)

from conftest import quiet_parse, read_fixture
from strategies import small_graphs

SMALL = GcnConfig(hidden=8, max_nodes=64)


def dense_oracle(X, A, W, b, act=lambda z: z):
    deg = A.sum(axis=1)
    with np.errstate(divide="ignore"):
        d = np.where(deg > 0, deg ** -0.5, 0.0)
    return act(np.diag(d) @ A @ np.diag(d) @ (X @ W.T + b))


def path3():
    return np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)


def test_hand_example_path():
    out = gcn_layer(np.array([1.0, 0.0, 1.0]), path3(), np.array([[1.0]]), np.array([0.0]))
    assert out == pytest.approx([0.0, math.sqrt(2), 0.0], abs=1e-15)


def test_edgeless_relu_is_zero():
    X = np.random.default_rng(0).normal(size=(4, 3))
    out = gcn_layer(X, np.zeros((4, 4)), np.ones((2, 3)), np.zeros(2), "relu")
    assert np.all(out == 0)


def test_bias_only_reduction():
    A = path3()
    out = gcn_layer(np.zeros((3, 2)), A, np.zeros((1, 2)), np.array([2.5]))
    deg = A.sum(axis=1)
    expected = [2.5 * sum(1 / math.sqrt(deg[v] * deg[u]) for u in np.flatnonzero(A[v])) for v in range(3)]
    assert out[:, 0] == pytest.approx(expected, abs=1e-14)


def test_layer_shape_errors():
    with pytest.raises(ValueError):
        gcn_layer(np.zeros((3, 2)), np.zeros((2, 2)), np.zeros((1, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        gcn_layer(np.zeros((3, 2)), path3(), np.zeros((1, 3)), np.zeros(1))


@given(small_graphs(), st.integers(1, 5), st.integers(1, 5), st.sampled_from(["identity", "relu", "tanh"]))
def test_layer_matches_dense_oracle(graph, d_in, d_out, act):
    A, seed = graph
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(A.shape[0], d_in))
    W = rng.normal(size=(d_out, d_in))
    b = rng.normal(size=d_out)
    f = {"identity": lambda z: z, "relu": lambda z: np.maximum(z, 0), "tanh": np.tanh}[act]
    assert np.allclose(gcn_layer(X, A, W, b, act), dense_oracle(X, A, W, b, f), atol=1e-10, rtol=0)


def test_self_loop_flag():
    A = path3()
    X = np.array([[1.0], [2.0], [3.0]])
    out = gcn_layer(X, A, np.eye(1), np.zeros(1), self_loops=True)
    assert np.allclose(out, dense_oracle(X, A + np.eye(3), np.eye(1), np.zeros(1)))


# ---------------------------------------------------------------- pooling

@pytest.mark.parametrize("n", range(1, 41))
def test_cluster_count(n):
    assert cluster_count(n) == max(1, -(-n // 4))


def test_diffpool_shapes_n10():
    rng = np.random.default_rng(1)
    A = (rng.uniform(size=(10, 10)) < 0.3).astype(float)
    A = np.triu(A, 1) + np.triu(A, 1).T
    X, Ac, S = diffpool_level(rng.normal(size=(10, 4)), rng.normal(size=(10, cluster_count(10))), A)
    assert X.shape == (3, 4) and Ac.shape == (3, 3)
    assert np.allclose(S.sum(axis=1), 1, atol=1e-12)


def test_diffpool_single_cluster_identity():
    # integer-valued features keep every sum exact, so equality can be bitwise
    rng = np.random.default_rng(2)
    Z = rng.integers(-50, 50, size=(5, 3)).astype(float)
    A = np.triu((rng.uniform(size=(5, 5)) < 0.5).astype(float), 1)
    A = A + A.T
    X, Ac, S = diffpool_level(Z, np.zeros((5, 1)), A)
    assert np.array_equal(S, np.ones((5, 1)))
    assert np.array_equal(X[0], Z.sum(axis=0))
    assert Ac[0, 0] == A.sum()


def test_diffpool_uniform_logits():
    Z = np.arange(12, dtype=float).reshape(4, 3)
    X, _, S = diffpool_level(Z, np.zeros((4, 2)), np.zeros((4, 4)))
    assert np.all(S == 0.5)
    assert np.array_equal(X[0], X[1]) and np.array_equal(X[0], 0.5 * Z.sum(axis=0))


def test_diffpool_shape_mismatch():
    with pytest.raises(ValueError):
        diffpool_level(np.zeros((3, 2)), np.zeros((4, 1)), np.zeros((3, 3)))


# ---------------------------------------------------------------- model

def test_node_features():
    g = quiet_parse("*c1ccccc1Cl")
    x = node_features(g)
    assert x.shape == (g.n_atoms, 14)
    assert np.all(x[:, :11].sum(axis=1) == 1)
    assert set(np.unique(x[:, 12:])) <= {0.0, 1.0}
    assert x[0, 10] == 1 and x[0, 11] == 0  # wildcard -> "other", zero mass


def test_tap_widths_and_determinism():
    model = init_model(GcnConfig(), seed=0)
    graphs = [quiet_parse(r["smiles"]) for r in read_fixture("smiles_corpus.csv")[:5]]
    assert gcn.forward(model, graphs[0], TapPoint.L).shape == (1,)
    assert gcn.forward(model, graphs[0], TapPoint.L_MINUS_1).shape == (64,)
    assert gcn.forward(model, graphs[0], "L-2").shape == (64,)
    a = gcn.tap_matrix(model, graphs, "L-2")
    assert a.shape == (5, 64) and np.array_equal(a, gcn.tap_matrix(model, graphs, "L-2"))
    # batch composition does not change inference outputs
    single = np.vstack([gcn.tap_matrix(model, [g], "L-1") for g in graphs])
    assert np.allclose(single, gcn.tap_matrix(model, graphs, "L-1"), rtol=0, atol=1e-12)


def test_zero_head_predicts_target_mean():
    model = init_model(SMALL, seed=3)
    model.target_mean, model.target_std = 42.0, 7.0
    model.params["fc2.W"][:] = 0.0
    assert gcn.forward(model, quiet_parse("CCO")) == 42.0


def test_tap_parse_aliases():
    assert TapPoint.parse("opt2") is TapPoint.L_MINUS_1
    assert TapPoint.parse("L_minus_2") is TapPoint.L_MINUS_2
    with pytest.raises(ValueError):
        TapPoint.parse("L-3")


def test_empty_graph_rejected():
    with pytest.raises(ValueError):
        encode_graph(quiet_parse("C").__class__((), (), ""))


# ---------------------------------------------------------------- gradients

def test_gradient_check_ethanol():
    model = init_model(SMALL, seed=11)
    assert gcn.gradient_check(model, quiet_parse("CCO"), 1.0) < 1e-4


def test_gradient_check_batch_eval_and_aux():
    cfg = GcnConfig(hidden=6, max_nodes=64, add_self_loops=True, link_loss_weight=0.3, entropy_loss_weight=0.2)
    model = init_model(cfg, seed=5)
    graphs = [quiet_parse(s) for s in ("c1ccccc1O", "CC(C)CN", "*CC(c1ccccc1)*")]
    assert max(gcn.gradient_check_report(model, graphs, [1.0, -2.0, 0.5], train_mode=True).values()) < 1e-4
    assert max(gcn.gradient_check_report(model, graphs, [1.0, -2.0, 0.5]).values()) < 1e-4


def test_stationary_point_gradients_vanish():
    model = init_model(SMALL, seed=2)
    enc = [encode_graph(quiet_parse("CCOC"))]
    out, _ = gcn._forward(model, enc, train=True)
    _, mse, grads = gcn.loss_and_grads(model, enc, out.copy())
    assert mse == 0.0
    assert max(np.abs(g).max() for g in grads.values()) < 1e-8
    p = model.params["conv0.W"]
    for j in range(3):
        orig = p.flat[j]
        p.flat[j] = orig + 1e-5
        lp = gcn._loss_only(model, enc, out)
        p.flat[j] = orig - 1e-5
        lm = gcn._loss_only(model, enc, out)
        p.flat[j] = orig
        assert abs((lp - lm) / 2e-5) < 1e-8


def test_corrupted_gradient_detected():
    model = init_model(SMALL, seed=4)
    rep = gcn.gradient_check_report(model, quiet_parse("CC(=O)Oc1ccccc1"), 3.0, corrupt="fc1.W")
    assert rep["fc1.W"] > 0.5


# ---------------------------------------------------------------- training

def test_memorize_single_graph():
    g = quiet_parse("CC(=O)Oc1ccccc1")
    model, log = gcn.train(SMALL, [g], [5.0], [g], [5.0], seed=0, options=TrainOptions(max_epochs=2000))
    assert log.epochs[-1][1] < 1e-3
    assert len(log.epochs) <= 2000


def test_memorize_several_graphs():
    graphs = [quiet_parse(s) for s in ("CCO", "c1ccccc1", "CC(C)N", "*CC(c1ccccc1)*")]
    y = [10.0, -5.0, 2.0, 30.0]
    model, log = gcn.train(SMALL, graphs, y, graphs, y, seed=1, options=TrainOptions(lr=1e-2, max_epochs=600, patience=600))
    assert log.epochs[-1][1] < 1e-2


def test_early_stopping_patience(monkeypatch):
    monkeypatch.setattr(gcn, "evaluate_mse", lambda *a, **k: 1.0)
    g = quiet_parse("CCO")
    _, log = gcn.train(SMALL, [g], [1.0], [g], [1.0], options=TrainOptions(max_epochs=500, patience=50))
    assert log.best_epoch == 1 and log.stopped_epoch == log.best_epoch + 50


def test_training_is_deterministic():
    graphs = [quiet_parse(s) for s in ("CCO", "c1ccccc1", "CC(C)N")]
    y = [1.0, 2.0, 3.0]
    opts = TrainOptions(max_epochs=5)
    m1, l1 = gcn.train(SMALL, graphs, y, graphs, y, seed=9, options=opts)
    m2, l2 = gcn.train(SMALL, graphs, y, graphs, y, seed=9, options=opts)
    assert l1.epochs == l2.epochs
    assert all(np.array_equal(m1.params[k], m2.params[k]) for k in m1.params)


def test_small_step_loss_mostly_decreases():
    graphs = [quiet_parse(r["smiles"]) for r in read_fixture("smiles_corpus.csv")[10:18]]
    y = np.arange(8, dtype=float)
    _, log = gcn.train(SMALL, graphs, y, graphs, y, seed=0, options=TrainOptions(lr=1e-4, batch_size=8, max_epochs=60, patience=60))
    tr = [e[1] for e in log.epochs]
    rises = sum(b > a for a, b in zip(tr, tr[1:]))
    assert rises <= 0.05 * len(tr)


def test_divergence_raises():
    g = quiet_parse("CCO")
    with pytest.raises(gcn.TrainingDivergedError):
        gcn.train(SMALL, [g, g], [1.0, 2.0], [g], [1.0], options=TrainOptions(lr=float("inf"), max_epochs=3))


def test_training_log_csv(tmp_path):
    g = quiet_parse("CCO")
    _, log = gcn.train(SMALL, [g], [1.0], [g], [1.0], options=TrainOptions(max_epochs=3))
    log.to_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_mse,val_mse" and len(lines) == 4


# ---------------------------------------------------------------- persistence

def test_save_load_round_trip(tmp_path):
    model = init_model(GcnConfig(add_self_loops=True), seed=8)
    model.target_mean, model.target_std = 3.5, 2.0
    graphs = [quiet_parse(r["smiles"]) for r in read_fixture("smiles_corpus.csv")[:10]]
    path = tmp_path / "m.pcgm"
    gcn.save_model(model, path)
    back = gcn.load_model(path)
    assert back.config == model.config and back.seed == 8
    assert all(np.array_equal(back.params[k], model.params[k]) for k in model.params)
    for tap in (None, "L-1", "L-2"):
        for g in graphs:
            assert np.array_equal(np.asarray(gcn.forward(back, g, tap)), np.asarray(gcn.forward(model, g, tap)))


def test_load_rejects_bad_files(tmp_path):
    model = init_model(SMALL)
    path = tmp_path / "m.pcgm"
    gcn.save_model(model, path)
    blob = path.read_bytes()
    (tmp_path / "magic").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ModelFormatError, match="magic"):
        gcn.load_model(tmp_path / "magic")
    (tmp_path / "future").write_bytes(blob[:4] + (99).to_bytes(4, "little") + blob[8:])
    with pytest.raises(UnsupportedVersionError):
        gcn.load_model(tmp_path / "future")
    (tmp_path / "short").write_bytes(blob[:-10])
    with pytest.raises(ModelFormatError):
        gcn.load_model(tmp_path / "short")
    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 0xFF
    (tmp_path / "flip").write_bytes(bytes(flipped))
    with pytest.raises(ModelFormatError, match="checksum"):
        gcn.load_model(tmp_path / "flip")
