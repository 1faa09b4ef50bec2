from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polycascade.learners import LearnerConfig, fit_learner, r2
from polycascade.modelselect import (
    GBT_SPACE,
    RF_SPACE,
    Param,
    history_rows,
    kfold_score,
    make_cv_plan,
    optimize,
    sfs_forward,
    tune,
)

FAST = LearnerConfig(n_estimators=20, learning_rate=0.3, max_depth=3)


# ---------------------------------------------------------------- CV plans

@given(st.integers(2, 200), st.integers(2, 10), st.integers(0, 2**31 - 1))
def test_cv_plan_partitions(n, k, seed):
    if n < k:
        with pytest.raises(ValueError):
            make_cv_plan(n, k, seed)
        return
    plan = make_cv_plan(n, k, seed)
    sizes = plan.fold_sizes()
    assert sum(sizes) == n and max(sizes) - min(sizes) <= 1
    seen = np.concatenate([va for _, va in plan.splits()])
    assert sorted(seen.tolist()) == list(range(n))
    for tr, va in plan.splits():
        assert not set(tr) & set(va) and len(tr) + len(va) == n
    assert np.array_equal(make_cv_plan(n, k, seed).folds, plan.folds)


def test_fold_sizes_six_three():
    assert make_cv_plan(6, 3).fold_sizes() == [2, 2, 2]


def test_kfold_score_matches_manual_loop():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(24, 3))
    y = X[:, 0] + 0.1 * rng.normal(size=24)
    plan = make_cv_plan(24, 4, seed=5)
    manual = []
    for f in range(4):
        va = plan.folds == f
        m = fit_learner(X[~va], y[~va], FAST, 0)
        manual.append(r2(y[va], m.predict(X[va])))
    assert kfold_score(X, y, FAST, plan) == pytest.approx(np.mean(manual), abs=1e-12)
    with pytest.raises(ValueError):
        kfold_score(X[:10], y[:10], FAST, plan)


def test_kfold_linear_signal():
    x = np.linspace(0, 1, 30)
    deep = LearnerConfig(n_estimators=50, learning_rate=0.3, max_depth=6)
    assert kfold_score(x[:, None], 4 * x + 1, deep, make_cv_plan(30, 3, 0)) > 0.9


def test_kfold_null_signal():
    scores = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(40, 3))
        y = rng.normal(size=40)
        scores.append(kfold_score(X, y, FAST, make_cv_plan(40, 3, seed)))
    assert max(scores) <= 0.5
    assert np.median(scores) <= 0.1


# ---------------------------------------------------------------- SFS

def _noise_features(seed, n=40, p=6):
    return np.random.default_rng(seed).normal(size=(n, p))


def test_sfs_first_pick_matches_single_feature_oracle():
    X = _noise_features(1)
    y = 3 * X[:, 2]
    res = sfs_forward(X, y, FAST, k_folds=5, max_features=2)
    plan = make_cv_plan(len(y), 5, 0)
    singles = [kfold_score(X[:, [j]], y, FAST, plan) for j in range(6)]
    assert res.selected[0] == int(np.argmax(singles)) == 2
    assert res.scores[0] == pytest.approx(max(singles), abs=1e-12)


def test_sfs_exhaustion_is_permutation():
    X = _noise_features(2, n=20, p=4)
    res = sfs_forward(X, X[:, 0], FAST, k_folds=4, max_features=4)
    assert sorted(res.selected) == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        sfs_forward(X, X[:, 0], FAST, max_features=5)


def test_sfs_scores_are_round_maxima():
    X = _noise_features(3, n=30, p=5)
    y = X[:, 1] - X[:, 3]
    res = sfs_forward(X, y, FAST, k_folds=3, max_features=3)
    for pick, score, cand in zip(res.selected, res.scores, res.candidates):
        assert score == max(cand.values())
        assert pick == min(j for j, v in cand.items() if v == score)
    assert all(set(c) == set(range(5)) - set(res.selected[:i]) for i, c in enumerate(res.candidates))


def test_sfs_ties_go_to_lowest_index():
    X = np.tile(np.linspace(0, 1, 20)[:, None], (1, 3))
    res = sfs_forward(X, X[:, 0], FAST, k_folds=4, max_features=1)
    assert res.selected == [0]


def test_sfs_recovers_additive_pair():
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        X = rng.normal(size=(60, 8))
        y = X[:, 1] + X[:, 4]
        res = sfs_forward(X, y, FAST, k_folds=5, max_features=3, seed=seed)
        hits += {1, 4} <= set(res.selected)
    assert hits == 10


# ---------------------------------------------------------------- tuning

def test_param_mapping():
    p = Param("depth", 2, 8, integer=True)
    assert [p.from_unit(u) for u in (0.0, 0.999999, 1.0)] == [2, 8, 8]
    assert all(p.from_unit(p.to_unit(v)) == v for v in range(2, 9))
    lr = Param("lr", 0.01, 0.2, log=True)
    assert lr.from_unit(0.5) == pytest.approx(math.sqrt(0.01 * 0.2))
    assert lr.contains(0.01) and not lr.contains(0.3) and not p.contains(2.5)


def test_search_ranges():
    by_name = {p.name: p for p in GBT_SPACE}
    assert (by_name["n_estimators"].low, by_name["n_estimators"].high) == (50, 200)
    assert (by_name["learning_rate"].low, by_name["learning_rate"].high) == (0.01, 0.2)
    assert (by_name["max_depth"].low, by_name["max_depth"].high) == (2, 8)
    assert (by_name["min_samples_split"].low, by_name["min_samples_split"].high) == (2, 8)
    assert (by_name["min_samples_leaf"].low, by_name["min_samples_leaf"].high) == (1, 4)
    assert "learning_rate" not in {p.name for p in RF_SPACE}


def _surface(params):
    return -((params["max_depth"] - 6) ** 2) - 0.2 * (params["min_samples_leaf"] - 2) ** 2 - 10 * abs(
        math.log(params["learning_rate"] / 0.05)
    )


@given(st.integers(0, 1000), st.integers(1, 30))
def test_optimize_stays_in_range_and_monotone(seed, n):
    res = optimize(_surface, GBT_SPACE, n_trials=n, seed=seed)
    assert len(res.history) == n
    for t in res.history:
        assert all(p.contains(t.params[p.name]) for p in GBT_SPACE)
    bsf = res.best_so_far()
    assert all(b >= a for a, b in zip(bsf, bsf[1:]))
    assert res.best.cv_mean_r2 == bsf[-1]


def test_optimize_single_trial_and_determinism():
    one = optimize(_surface, GBT_SPACE, n_trials=1, seed=3)
    assert len(one.history) == 1 and one.best is one.history[0]
    a = optimize(_surface, GBT_SPACE, n_trials=25, seed=8)
    b = optimize(_surface, GBT_SPACE, n_trials=25, seed=8)
    assert [t.params for t in a.history] == [t.params for t in b.history]


def test_optimize_failed_trials():
    def flaky(params):
        if params["max_depth"] % 2:
            raise RuntimeError("boom")
        return float(params["max_depth"])

    res = optimize(flaky, GBT_SPACE, n_trials=20, seed=1)
    assert any(t.failed for t in res.history) and not res.best.failed
    with pytest.raises(RuntimeError):
        optimize(lambda p: 1 / 0, GBT_SPACE, n_trials=3)
    with pytest.raises(ValueError):
        optimize(_surface, GBT_SPACE, n_trials=0)


def test_optimize_beats_grid_decile():
    space = (Param("max_depth", 2, 8, integer=True), Param("min_samples_leaf", 1, 4, integer=True),
             Param("learning_rate", 0.01, 0.2, log=True))
    lattice = [
        {"max_depth": d, "min_samples_leaf": l, "learning_rate": space[2].from_unit(u)}
        for d, l, u in itertools.product(range(2, 9), range(1, 5), np.linspace(0, 1, 11))
    ]
    decile = np.quantile([_surface(p) for p in lattice], 0.9)
    res = optimize(_surface, space, n_trials=50, seed=0)
    assert res.best.cv_mean_r2 >= decile


def test_tune_end_to_end():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(45, 3))
    y = 2 * X[:, 0] + np.sin(X[:, 1])
    res = tune(X, y, "rf", n_trials=4, k_folds=3, seed=2)
    assert len(res.history) == 4 and set(res.best.params) == {p.name for p in RF_SPACE}
    rows = history_rows(res)
    assert [r["trial"] for r in rows] == [0, 1, 2, 3] and "cv_mean_r2" in rows[0]
