"""
Forward feature selection and hyperparameter search
===================================================

"""

import numpy as np

from polycascade.learners import LearnerConfig
from polycascade.modelselect import history_rows, sfs_forward, tune

rng = np.random.default_rng(3)
X = rng.normal(size=(80, 8))
y = 2 * X[:, 1] - X[:, 4] + 0.1 * rng.normal(size=80)

quick = LearnerConfig(n_estimators=30, learning_rate=0.3, max_depth=3)
sel = sfs_forward(X, y, quick, k_folds=5, max_features=3)
for j, s in zip(sel.selected, sel.scores):
    print(f"added x{j}: CV R2 {s:.3f}")

# short search for the demo; the default budget is 50 trials
res = tune(X[:, sel.selected], y, "gbt", n_trials=12, k_folds=3, seed=0)
print("best:", res.best.params, round(res.best.cv_mean_r2, 3))
print("best so far:", np.round(res.best_so_far(), 3))
print(history_rows(res)[0])
