"""
Cross-validated scoring, sequential forward selection and a sequential
model-based hyperparameter search (density-ratio / TPE style).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import norm, qmc

from .learners import LearnerConfig, fit_learner, r2

logger = logging.getLogger(__name__)

DEFAULT_LEARNER = LearnerConfig(n_estimators=100, learning_rate=0.1, max_depth=4, min_samples_split=2, min_samples_leaf=1)


@dataclass(frozen=True)
class CvPlan:
    k: int
    folds: np.ndarray
    seed: int

    def splits(self):
        for f in range(self.k):
            yield np.flatnonzero(self.folds != f), np.flatnonzero(self.folds == f)

    def fold_sizes(self) -> list[int]:
        return np.bincount(self.folds, minlength=self.k).tolist()


def make_cv_plan(n: int, k: int, seed: int = 0) -> CvPlan:
    """Shuffle rows with ``seed`` and deal them round-robin into ``k`` folds."""
    if k < 2 or n < k:
        raise ValueError(f"need n >= k >= 2, got n={n}, k={k}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % k
    return CvPlan(k, folds, seed)


def kfold_score(X, y, learner: LearnerConfig, plan: CvPlan, seed: int = 0) -> float:
    """Unweighted mean of per-fold R^2."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(plan.folds) != len(y):
        raise ValueError("CV plan does not match the number of rows")
    scores = []
    for tr, va in plan.splits():
        if len(va) < 1 or len(tr) < 1:
            raise ValueError("every fold needs at least one row")
        model = fit_learner(X[tr], y[tr], learner, seed)
        scores.append(r2(y[va], model.predict(X[va])))
    return float(np.mean(scores))


@dataclass
class SfsResult:
    selected: list[int]
    scores: list[float]
    candidates: list[dict[int, float]] = field(default_factory=list)


def sfs_forward(
    X,
    y,
    learner: LearnerConfig = DEFAULT_LEARNER,
    k_folds: int = 5,
    max_features: int = 10,
    seed: int = 0,
) -> SfsResult:
    """Greedy forward selection scored by k-fold R^2; ties go to the lowest index.

    Returns features in the order they were added.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    if max_features > p:
        raise ValueError(f"max_features={max_features} exceeds the {p} available features")
    plan = make_cv_plan(len(y), k_folds, seed)
    selected: list[int] = []
    result = SfsResult([], [])
    for _ in range(max_features):
        trial = {}
        for j in range(p):
            if j in selected:
                continue
            trial[j] = kfold_score(X[:, selected + [j]], y, learner, plan, seed)
        best = max(trial, key=lambda j: (trial[j], -j))
        selected.append(best)
        result.scores.append(trial[best])
        result.candidates.append(trial)
    result.selected = selected
    return result


# ---------------------------------------------------------------- tuning

@dataclass(frozen=True)
class Param:
    name: str
    low: float
    high: float
    integer: bool = False
    log: bool = False

    def from_unit(self, u: float):
        u = min(max(u, 0.0), 1.0)
        if self.integer:
            span = int(self.high) - int(self.low) + 1
            return int(min(int(self.high), int(self.low) + math.floor(u * span)))
        if self.log:
            return float(math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low))))
        return float(self.low + u * (self.high - self.low))

    def to_unit(self, v) -> float:
        if self.integer:
            span = int(self.high) - int(self.low) + 1
            return (int(v) - int(self.low) + 0.5) / span
        if self.log:
            return (math.log(v) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (v - self.low) / (self.high - self.low)

    def contains(self, v) -> bool:
        if self.integer and int(v) != v:
            return False
        return self.low <= v <= self.high


GBT_SPACE: tuple[Param, ...] = (
    Param("n_estimators", 50, 200, integer=True),
    Param("learning_rate", 0.01, 0.2, log=True),
    Param("max_depth", 2, 8, integer=True),
    Param("min_samples_split", 2, 8, integer=True),
    Param("min_samples_leaf", 1, 4, integer=True),
)
RF_SPACE: tuple[Param, ...] = tuple(p for p in GBT_SPACE if p.name != "learning_rate")


def default_space(kind: str) -> tuple[Param, ...]:
    return GBT_SPACE if kind == "gbt" else RF_SPACE


@dataclass
class TrialRecord:
    index: int
    params: dict
    cv_mean_r2: float
    failed: bool = False
    unit: tuple[float, ...] = field(default=(), repr=False)


@dataclass
class TuneResult:
    best: TrialRecord
    history: list[TrialRecord]
    gamma_rule: str = "ceil(0.25*n)"

    def best_so_far(self) -> list[float]:
        out, cur = [], -math.inf
        for t in self.history:
            if not t.failed:
                cur = max(cur, t.cv_mean_r2)
            out.append(cur)
        return out


N_STARTUP = 10
N_CANDIDATES = 24


class _Parzen:
    """Product of truncated Gaussians on [0,1]^d plus one uniform prior component."""

    def __init__(self, points: np.ndarray):
        self.points = points
        m, d = points.shape if points.size else (0, points.shape[1] if points.ndim == 2 else 0)
        if m > 1:
            spread = points.std(axis=0)
            bw = spread * m ** (-1.0 / (d + 4))
        else:
            bw = np.full(d, 0.5)
        self.bw = np.clip(np.where(bw > 0, bw, 0.5), 0.05, 0.5)
        self.m = m

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        # x: (c, d)
        if self.m == 0:
            return np.zeros(x.shape[0])
        mu = self.points[None, :, :]
        bw = self.bw[None, None, :]
        z = (x[:, None, :] - mu) / bw
        mass = norm.cdf((1 - mu) / bw) - norm.cdf(-mu / bw)
        log_k = (norm.logpdf(z) - np.log(bw) - np.log(mass)).sum(axis=2)  # (c, m)
        log_terms = np.concatenate([log_k, np.zeros((x.shape[0], 1))], axis=1)
        top = log_terms.max(axis=1, keepdims=True)
        return (top + np.log(np.exp(log_terms - top).sum(axis=1, keepdims=True))).ravel() - np.log(self.m + 1)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        d = self.bw.shape[0]
        out = np.empty((count, d))
        for c in range(count):
            comp = rng.integers(0, self.m + 1)
            if comp == self.m:
                out[c] = rng.uniform(size=d)
                continue
            mu = self.points[comp]
            for j in range(d):
                while True:
                    v = rng.normal(mu[j], self.bw[j])
                    if 0.0 <= v <= 1.0:
                        break
                out[c, j] = v
        return out


def optimize(
    objective: Callable[[dict], float],
    space: Sequence[Param],
    n_trials: int = 50,
    seed: int = 0,
    n_startup: int = N_STARTUP,
    n_candidates: int = N_CANDIDATES,
) -> TuneResult:
    """Maximize ``objective`` over ``space``.

    The first ``n_startup`` points come from a scrambled Halton sequence.
    After that, completed trials are ranked, the top ceil(0.25 n) form the
    "good" set, and the next point is the one among ``n_candidates`` draws
    from the good-set density that maximizes good/bad density ratio.
    Exceptions raised by the objective mark the trial as failed.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    d = len(space)
    rng = np.random.default_rng(seed)
    halton = qmc.Halton(d=d, scramble=True, seed=np.random.default_rng(seed + 7919)).random(max(1, n_startup))
    history: list[TrialRecord] = []
    for t in range(n_trials):
        ok = [h for h in history if not h.failed]
        if t < n_startup or len(ok) < 2:
            u = halton[t % len(halton)] if t < n_startup else rng.uniform(size=d)
        else:
            ranked = sorted(ok, key=lambda h: (-h.cv_mean_r2, h.index))
            n_good = math.ceil(0.25 * len(ranked))
            good = np.array([h.unit for h in ranked[:n_good]])
            bad_units = [h.unit for h in ranked[n_good:]] + [h.unit for h in history if h.failed]
            bad = np.array(bad_units) if bad_units else np.zeros((0, d))
            lg, lb = _Parzen(good), _Parzen(bad.reshape(-1, d))
            cand = lg.sample(rng, n_candidates)
            score = lg.log_pdf(cand) - lb.log_pdf(cand)
            u = cand[int(np.argmax(score))]
        params = {p.name: p.from_unit(float(x)) for p, x in zip(space, u)}
        unit = tuple(p.to_unit(params[p.name]) for p in space)
        try:
            value = float(objective(params))
            failed = not math.isfinite(value)
        except Exception as exc:  # a failed trial must not end the search
            logger.warning("trial %d failed: %s", t, exc)
            value, failed = math.nan, True
        history.append(TrialRecord(t, params, value, failed, unit))
    ok = [h for h in history if not h.failed]
    if not ok:
        raise RuntimeError("all tuning trials failed")
    best = max(ok, key=lambda h: (h.cv_mean_r2, -h.index))
    return TuneResult(best, history)


def tune(
    X,
    y,
    kind: str = "gbt",
    space: Sequence[Param] | None = None,
    n_trials: int = 50,
    k_folds: int = 3,
    seed: int = 0,
    base: LearnerConfig | None = None,
) -> TuneResult:
    """Search learner hyperparameters by mean k-fold R^2."""
    space = tuple(space or default_space(kind))
    base = base or LearnerConfig(kind=kind)
    plan = make_cv_plan(len(y), k_folds, seed)

    def objective(params):
        return kfold_score(X, y, base.with_params(**params), plan, seed)

    return optimize(objective, space, n_trials, seed)


def history_rows(result: TuneResult) -> list[dict]:
    rows = []
    for h in result.history:
        rows.append({"trial": h.index, **h.params, "cv_mean_r2": h.cv_mean_r2, "failed": h.failed})
    return rows
