"""
Regression trees, boosting and forests
======================================

"""

import numpy as np

from polycascade.learners import LearnerConfig, fit_gbt, fit_rf, fit_tree, r2, rmse

rng = np.random.default_rng(0)
X = rng.uniform(-2, 2, size=(200, 4))
y = np.sin(2 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.normal(size=200)
Xtr, Xte, ytr, yte = X[:150], X[150:], y[:150], y[150:]

stump = fit_tree([[0], [1], [2], [3]], [0, 0, 1, 1], max_depth=1)
print("stump threshold:", stump.threshold[0])

gbt = fit_gbt(Xtr, ytr, LearnerConfig(n_estimators=150, learning_rate=0.1, max_depth=3))
rf = fit_rf(Xtr, ytr, LearnerConfig(kind="rf", n_estimators=100, max_depth=None))
for name, model in (("gbt", gbt), ("rf", rf)):
    pred = model.predict(Xte)
    print(f"{name}: R2 {r2(yte, pred):.3f}  RMSE {rmse(yte, pred):.3f}")
    print("  importances", np.round(model.feature_importances, 3))

# training error after each boosting stage never goes up
mse = [np.mean((ytr - p) ** 2) for p in gbt.staged_predict(Xtr)]
print("train MSE at 0, 10, 150 trees:", round(mse[0], 3), round(mse[10], 3), round(mse[-1], 4))
