"""
CART regression trees, gradient boosting and random forests, plus metrics.

Trees are stored as flat arrays (sklearn-style): node ``i`` is a leaf when
``feature[i] == -1``; otherwise rows with ``x[feature] <= threshold`` go to
``left[i]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import container

MAGIC = b"PCTE"


@dataclass(frozen=True)
class LearnerConfig:
    kind: str = "gbt"
    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int | None = 4
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: int | float | str | None = None
    bootstrap: bool = True

    def with_params(self, **params) -> "LearnerConfig":
        known = {k: v for k, v in params.items() if k in self.__dataclass_fields__}
        return replace(self, **known)

    def hyperparameters(self) -> dict:
        keys = ["n_estimators", "learning_rate", "max_depth", "min_samples_split", "min_samples_leaf"]
        if self.kind == "rf":
            keys.remove("learning_rate")
        return {k: getattr(self, k) for k in keys}


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    gain: np.ndarray
    n_features: int
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.feature[node] >= 0:
                stack += [(self.left[node], d + 1), (self.right[node], d + 1)]
        return best

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def importances(self) -> np.ndarray:
        """Unnormalized SSE decrease per feature."""
        out = np.zeros(self.n_features)
        internal = self.feature >= 0
        np.add.at(out, self.feature[internal], self.gain[internal])
        return out


def _best_split(Xn: np.ndarray, yn: np.ndarray, feats: np.ndarray, min_leaf: int):
    """Return (gain, feature, threshold) of the best SSE split, or None.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values. Ties go to the lowest feature index, then the lowest threshold.
    """
    m = yn.shape[0]
    if m < 2 * min_leaf:
        return None
    yc = yn - yn.mean()
    sub = Xn[:, feats]
    order = np.argsort(sub, axis=0, kind="stable")
    xs = np.take_along_axis(sub, order, axis=0)
    ys = yc[order]
    csum = np.cumsum(ys, axis=0)
    left_sum = csum[:-1]
    right_sum = csum[-1] - left_sum
    n_left = np.arange(1, m)[:, None].astype(float)
    n_right = m - n_left
    # SSE decrease for centered y (parent term S^2/n is ~0)
    gains = left_sum**2 / n_left + right_sum**2 / n_right - csum[-1] ** 2 / m
    valid = xs[1:] > xs[:-1]
    nl = np.arange(1, m)
    valid &= ((nl >= min_leaf) & (m - nl >= min_leaf))[:, None]
    if not valid.any():
        return None
    gains = np.where(valid, gains, -np.inf)
    # feature-major scan: argmax returns the first maximum
    flat = gains.T.ravel()
    k = int(np.argmax(flat))
    fi, pos = divmod(k, m - 1)
    lo, hi = xs[pos, fi], xs[pos + 1, fi]
    thr = 0.5 * (lo + hi)
    if not thr < hi:
        thr = lo
    return float(flat[k]), int(feats[fi]), float(thr)


def _resolve_max_features(max_features, p: int) -> int | None:
    if max_features is None:
        return None
    if max_features == "third":
        return max(1, math.ceil(p / 3))
    if max_features == "sqrt":
        return max(1, math.ceil(math.sqrt(p)))
    if isinstance(max_features, float) and max_features <= 1.0:
        return max(1, math.ceil(max_features * p))
    return min(p, int(max_features))


def fit_tree(
    X,
    y,
    max_depth: int | None = None,
    min_samples_split: int = 2,
    min_samples_leaf: int = 1,
    max_features=None,
    seed: int | None = 0,
    rng: np.random.Generator | None = None,
) -> RegressionTree:
    """Grow a CART regression tree by greedy SSE reduction.

    ``max_features`` enables per-split feature subsampling (random forest);
    leave it ``None`` for deterministic full search.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[0] != y.shape[0]:
        raise ValueError(f"need matching non-empty X and y, got X {X.shape} and y {y.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    n, p = X.shape
    k_feat = _resolve_max_features(max_features, p)
    if k_feat is not None and rng is None:
        rng = np.random.default_rng(seed)
    all_feats = np.arange(p)

    feature, threshold, left, right, value, count, gain = [], [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        count.append(len(idx))
        gain.append(0.0)
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        m = len(idx)
        if m < max(2, min_samples_split) or (max_depth is not None and depth >= max_depth):
            continue
        yn = y[idx]
        sse = float(np.sum((yn - yn.mean()) ** 2))
        if sse <= 0.0:
            continue
        feats = all_feats if k_feat is None else np.sort(rng.choice(p, size=k_feat, replace=False))
        found = _best_split(X[idx], yn, feats, min_samples_leaf)
        if found is None:
            continue
        g, f, thr = found
        if g <= 1e-12 * sse:
            continue
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node], gain[node] = f, thr, g
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return RegressionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value),
        n_samples=np.array(count, dtype=np.int64),
        gain=np.array(gain),
        n_features=p,
        max_depth=max_depth,
        min_samples_split=min_samples_split,
        min_samples_leaf=min_samples_leaf,
    )


@dataclass
class TreeEnsembleModel:
    kind: str
    trees: list[RegressionTree]
    config: LearnerConfig
    learning_rate: float = 1.0
    initial_prediction: float = 0.0
    seed: int = 0
    feature_names: list[str] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features if self.trees else len(self.feature_names)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "gbt":
            out = np.full(X.shape[0], self.initial_prediction)
            for t in self.trees:
                out += self.learning_rate * t.predict(X)
            return out
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def staged_predict(self, X):
        """Yield GBT predictions after 0, 1, ..., n trees."""
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], self.initial_prediction)
        yield out.copy()
        for t in self.trees:
            out = out + self.learning_rate * t.predict(X)
            yield out.copy()

    @property
    def feature_importances(self) -> np.ndarray:
        total = np.sum([t.importances() for t in self.trees], axis=0) if self.trees else np.zeros(0)
        s = total.sum()
        return total / s if s > 0 else total


def fit_gbt(X, y, config: LearnerConfig | None = None, seed: int = 0) -> TreeEnsembleModel:
    """Least-squares gradient boosting: start from mean(y), fit each tree to residuals."""
    cfg = config or LearnerConfig(kind="gbt")
    if cfg.n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("empty training data")
    f0 = float(y.mean())
    pred = np.full(len(y), f0)
    trees = []
    for m in range(cfg.n_estimators):
        t = fit_tree(
            X,
            y - pred,
            max_depth=cfg.max_depth,
            min_samples_split=cfg.min_samples_split,
            min_samples_leaf=cfg.min_samples_leaf,
            max_features=cfg.max_features,
            seed=seed + m,
        )
        pred = pred + cfg.learning_rate * t.predict(X)
        trees.append(t)
    return TreeEnsembleModel("gbt", trees, cfg, cfg.learning_rate, f0, seed)


def _fit_rf_tree(X, y, cfg: LearnerConfig, tree_seed: int) -> RegressionTree:
    rng = np.random.default_rng(tree_seed)
    n = X.shape[0]
    idx = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
    max_features = "third" if cfg.max_features is None else cfg.max_features
    return fit_tree(
        X[idx],
        y[idx],
        max_depth=cfg.max_depth,
        min_samples_split=cfg.min_samples_split,
        min_samples_leaf=cfg.min_samples_leaf,
        max_features=max_features,
        rng=rng,
    )


def fit_rf(X, y, config: LearnerConfig | None = None, seed: int = 0) -> TreeEnsembleModel:
    """Bagged trees with ceil(p/3) features tried per split; tree i uses seed + i."""
    cfg = config or LearnerConfig(kind="rf")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("empty training data")
    trees = [_fit_rf_tree(X, y, cfg, seed + i) for i in range(cfg.n_estimators)]
    return TreeEnsembleModel("rf", trees, cfg, seed=seed)


def fit_learner(X, y, config: LearnerConfig, seed: int = 0) -> TreeEnsembleModel:
    if config.kind == "gbt":
        return fit_gbt(X, y, config, seed)
    if config.kind == "rf":
        return fit_rf(X, y, config, seed)
    raise ValueError(f"unknown learner kind {config.kind!r}")


def r2(y_true, y_pred) -> float:
    """Coefficient of determination; -inf when y_true is constant and the fit is not exact."""
    yt = np.asarray(y_true, dtype=float)
    yp = np.asarray(y_pred, dtype=float)
    if yt.shape != yp.shape or yt.size == 0:
        raise ValueError(f"length mismatch or empty input: {yt.shape} vs {yp.shape}")
    ss_res = float(np.sum((yt - yp) ** 2))
    ss_tot = float(np.sum((yt - yt.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -math.inf
    return 1.0 - ss_res / ss_tot


def rmse(y_true, y_pred) -> float:
    yt = np.asarray(y_true, dtype=float)
    yp = np.asarray(y_pred, dtype=float)
    if yt.shape != yp.shape or yt.size == 0:
        raise ValueError(f"length mismatch or empty input: {yt.shape} vs {yp.shape}")
    return math.sqrt(float(np.mean((yt - yp) ** 2)))


# ---------------------------------------------------------------- persistence

_TREE_FIELDS = ("feature", "threshold", "left", "right", "value", "n_samples", "gain")


def save_ensemble(model: TreeEnsembleModel, path, extra: dict | None = None) -> None:
    cfg = asdict(model.config)
    meta = {
        "kind": model.kind,
        "config": cfg,
        "learning_rate": model.learning_rate,
        "initial_prediction": model.initial_prediction,
        "seed": model.seed,
        "feature_names": list(model.feature_names),
        "n_trees": len(model.trees),
        "trees": [
            {
                "n_features": t.n_features,
                "max_depth": t.max_depth,
                "min_samples_split": t.min_samples_split,
                "min_samples_leaf": t.min_samples_leaf,
            }
            for t in model.trees
        ],
        "extra": extra or {},
    }
    arrays = {}
    for i, t in enumerate(model.trees):
        for f in _TREE_FIELDS:
            arrays[f"tree{i}.{f}"] = getattr(t, f)
    container.dump(path, MAGIC, meta, arrays)


def load_ensemble(path) -> tuple[TreeEnsembleModel, dict]:
    meta, arrays = container.load(path, MAGIC)
    trees = []
    for i, tm in enumerate(meta["trees"]):
        trees.append(RegressionTree(**{f: arrays[f"tree{i}.{f}"] for f in _TREE_FIELDS}, **tm))
    model = TreeEnsembleModel(
        meta["kind"],
        trees,
        LearnerConfig(**meta["config"]),
        meta["learning_rate"],
        meta["initial_prediction"],
        meta["seed"],
        meta["feature_names"],
    )
    return model, meta.get("extra", {})
