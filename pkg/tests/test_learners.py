from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polycascade.container import ModelFormatError
from polycascade.learners import (
    LearnerConfig,
    fit_gbt,
    fit_learner,
    fit_rf,
    fit_tree,
    load_ensemble,
    r2,
    rmse,
    save_ensemble,
)


def exhaustive_root_gain(X, y, min_leaf=1):
    """Brute-force best SSE decrease over every feature and midpoint."""
    n, p = X.shape
    parent = np.sum((y - y.mean()) ** 2)
    best = (-np.inf, None, None)
    for f in range(p):
        vals = np.unique(X[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (lo + hi)
            mask = X[:, f] <= thr
            if mask.sum() < min_leaf or (~mask).sum() < min_leaf:
                continue
            yl, yr = y[mask], y[~mask]
            g = parent - np.sum((yl - yl.mean()) ** 2) - np.sum((yr - yr.mean()) ** 2)
            if g > best[0] + 1e-9 * max(1.0, parent):
                best = (g, f, thr)
    return best


def random_dataset(seed, max_n=50, max_p=8, integer=False):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_n + 1))
    p = int(rng.integers(1, max_p + 1))
    X = rng.integers(0, 5, size=(n, p)).astype(float) if integer else rng.normal(size=(n, p))
    y = rng.normal(size=n) + 2 * X[:, 0]
    return X, y


# ---------------------------------------------------------------- trees

def test_step_function_split():
    t = fit_tree([[0], [1], [2], [3]], [0, 0, 1, 1], max_depth=1)
    assert t.feature[0] == 0 and t.threshold[0] == 1.5
    assert sorted(t.value[[t.left[0], t.right[0]]].tolist()) == [0.0, 1.0]
    assert np.sum((t.predict([[0], [1], [2], [3]]) - [0, 0, 1, 1]) ** 2) == 0.0


def test_trivial_trees():
    t = fit_tree(np.arange(6.0)[:, None], np.full(6, 4.2))
    assert t.node_count == 1 and t.value[0] == 4.2
    t = fit_tree([[3.0, 1.0]], [7.5])
    assert t.node_count == 1 and t.predict([[0.0, 0.0]])[0] == 7.5
    with pytest.raises(ValueError):
        fit_tree(np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        fit_tree([[np.nan]], [1.0])


@pytest.mark.parametrize("seed", range(50))
def test_root_split_matches_exhaustive_oracle(seed):
    X, y = random_dataset(seed, integer=seed % 2 == 0)
    t = fit_tree(X, y, max_depth=1)
    gain, f, thr = exhaustive_root_gain(X, y)
    if f is None:
        assert t.node_count == 1
        return
    assert t.gain[0] == pytest.approx(gain, rel=1e-9, abs=1e-9)
    assert (t.feature[0], t.threshold[0]) == (f, thr)


def test_tie_breaks_to_lowest_feature():
    X = np.array([[0, 0], [0, 0], [1, 1], [1, 1]], dtype=float)
    t = fit_tree(X, [0, 0, 1, 1], max_depth=1)
    assert t.feature[0] == 0


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 4), st.integers(2, 8))
def test_tree_structural_invariants(seed, depth, leaf, split):
    X, y = random_dataset(seed)
    t = fit_tree(X, y, max_depth=depth, min_samples_leaf=leaf, min_samples_split=split)
    assert t.depth() <= depth
    leaves = t.feature < 0
    assert np.all(t.n_samples[leaves] >= min(leaf, len(y)))
    assert np.all(np.isfinite(t.value))
    internal = np.flatnonzero(~leaves)
    assert np.all((t.left[internal] > 0) & (t.right[internal] > 0))
    assert np.all(t.n_samples[internal] == t.n_samples[t.left[internal]] + t.n_samples[t.right[internal]])


@given(st.integers(0, 10_000))
def test_unconstrained_tree_interpolates_unique_rows(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(int(rng.integers(1, 40)), 3))
    y = rng.normal(size=X.shape[0])
    t = fit_tree(X, y)
    assert np.allclose(t.predict(X), y, atol=1e-12)


def test_importance_single_feature():
    X = np.column_stack([np.zeros(8), np.arange(8.0), np.ones(8)])
    m = fit_gbt(X, np.arange(8.0) ** 2, LearnerConfig(n_estimators=5, max_depth=3))
    assert m.feature_importances.tolist() == [0.0, 1.0, 0.0]


# ---------------------------------------------------------------- ensembles

def test_gbt_two_points_exact():
    m = fit_gbt([[0.0], [1.0]], [3.0, 7.0], LearnerConfig(n_estimators=1, learning_rate=1.0, max_depth=1))
    assert m.predict([[0.0], [1.0]]).tolist() == [3.0, 7.0]


def test_gbt_zero_learning_rate():
    X, y = random_dataset(3)
    m = fit_gbt(X, y, LearnerConfig(n_estimators=5, learning_rate=0.0))
    assert np.allclose(m.predict(X), y.mean())


@pytest.mark.parametrize("seed", range(50))
def test_gbt_train_mse_monotone(seed):
    X, y = random_dataset(seed)
    m = fit_gbt(X, y, LearnerConfig(n_estimators=15, learning_rate=0.3, max_depth=2))
    mses = [np.mean((y - p) ** 2) for p in m.staged_predict(X)]
    assert all(b <= a + 1e-12 for a, b in zip(mses, mses[1:]))
    assert np.array_equal(m.predict(X), list(m.staged_predict(X))[-1])


def test_gbt_prediction_formula():
    X, y = random_dataset(7)
    m = fit_gbt(X, y, LearnerConfig(n_estimators=4, learning_rate=0.2))
    manual = m.initial_prediction + 0.2 * sum(t.predict(X) for t in m.trees)
    assert np.allclose(m.predict(X), manual, atol=1e-12)
    assert m.initial_prediction == pytest.approx(y.mean())
    with pytest.raises(ValueError):
        fit_gbt(X, y, LearnerConfig(n_estimators=0))


def test_rf_memorizes_without_bootstrap():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 5))
    y = rng.normal(size=30)
    cfg = LearnerConfig(kind="rf", n_estimators=1, max_depth=None, bootstrap=False)
    m = fit_rf(X, y, cfg)
    assert np.array_equal(m.predict(X), y)


def test_rf_constant_and_determinism():
    X, y = random_dataset(11)
    m = fit_rf(X, np.full(len(y), -2.0), LearnerConfig(kind="rf", n_estimators=5))
    assert np.all(m.predict(X) == -2.0)
    a = fit_rf(X, y, LearnerConfig(kind="rf", n_estimators=6), seed=9)
    b = fit_rf(X, y, LearnerConfig(kind="rf", n_estimators=6), seed=9)
    assert all(np.array_equal(s.threshold, t.threshold) for s, t in zip(a.trees, b.trees))
    assert np.array_equal(a.predict(X), b.predict(X))


def test_rf_trees_use_derived_seeds():
    # tree i of a forest seeded s equals tree 0 of a forest seeded s + i
    X, y = random_dataset(12)
    big = fit_rf(X, y, LearnerConfig(kind="rf", n_estimators=3), seed=20)
    solo = fit_rf(X, y, LearnerConfig(kind="rf", n_estimators=1), seed=22)
    assert np.array_equal(big.trees[2].threshold, solo.trees[0].threshold)


@given(st.integers(0, 10_000))
def test_rf_between_tree_extremes_and_order_free(seed):
    X, y = random_dataset(seed, max_n=30, max_p=5)
    m = fit_rf(X, y, LearnerConfig(kind="rf", n_estimators=5, max_depth=3), seed=seed)
    per_tree = np.array([t.predict(X) for t in m.trees])
    pred = m.predict(X)
    assert np.all(pred >= per_tree.min(axis=0) - 1e-12) and np.all(pred <= per_tree.max(axis=0) + 1e-12)
    m.trees.reverse()
    assert np.allclose(m.predict(X), pred, atol=1e-12)
    imp = m.feature_importances
    assert np.all(imp >= 0) and (imp.sum() == 0 or imp.sum() == pytest.approx(1.0))


def test_unknown_learner_kind():
    with pytest.raises(ValueError):
        fit_learner([[0.0]], [0.0], LearnerConfig(kind="svm"))


# ---------------------------------------------------------------- metrics

def test_metric_examples():
    y = np.array([1.0, 2.0, 3.0])
    assert r2(y, y) == 1.0 and rmse(y, y) == 0.0
    assert r2(y, np.full(3, 2.0)) == 0.0
    assert r2(y, [1.1, 2.0, 2.9]) == pytest.approx(0.99, abs=1e-12)
    assert rmse(y, [1.1, 2.0, 2.9]) == pytest.approx(math.sqrt(0.02 / 3), abs=1e-12)
    assert rmse(y, [1.1, 2.0, 2.9]) == pytest.approx(0.08165, abs=1e-5)


def test_metric_edge_cases():
    assert r2([5, 5], [5, 5]) == 1.0
    assert r2([5, 5], [5, 6]) == -math.inf
    with pytest.raises(ValueError):
        r2([1, 2], [1])
    with pytest.raises(ValueError):
        rmse([], [])


# ---------------------------------------------------------------- persistence

@pytest.mark.parametrize("kind", ["gbt", "rf"])
def test_ensemble_round_trip(tmp_path, kind):
    X, y = random_dataset(5)
    m = fit_learner(X, y, LearnerConfig(kind=kind, n_estimators=7, max_depth=3), seed=3)
    m.feature_names = [f"f{i}" for i in range(X.shape[1])]
    path = tmp_path / "model.pcte"
    save_ensemble(m, path, extra={"arm": "opt2"})
    back, extra = load_ensemble(path)
    assert extra == {"arm": "opt2"} and back.feature_names == m.feature_names
    assert back.config == m.config
    assert np.array_equal(back.predict(X), m.predict(X))


def test_ensemble_corruption_detected(tmp_path):
    X, y = random_dataset(5)
    path = tmp_path / "model.pcte"
    save_ensemble(fit_gbt(X, y, LearnerConfig(n_estimators=2)), path)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ModelFormatError):
        load_ensemble(path)
