"""
Training the GCN extractor and reading its tap points
=====================================================

"""

import numpy as np

from polycascade import gcn
from polycascade.cascade import parse_graphs
from polycascade.gcn import GcnConfig, TrainOptions
from polycascade.harness.data import SplitSpec, split
from polycascade.harness.synthetic import generate_synthetic

records, coefs = generate_synthetic(n=300, seed=1)
graphs = parse_graphs(records)
y = np.array([r.target for r in records])
parts = split(records, SplitSpec.source(seed=0))
pick = lambda idx: [graphs[i] for i in idx]

# a narrow network keeps the demo quick
config = GcnConfig(hidden=16)
model, log = gcn.train(
    config, pick(parts["train"]), y[parts["train"]], pick(parts["val"]), y[parts["val"]],
    seed=0, options=TrainOptions(max_epochs=60, patience=20),
)
print(f"stopped at epoch {log.stopped_epoch}, best {log.best_epoch}")

test_pred = gcn.predict(model, pick(parts["test"]))
ss_res = np.sum((y[parts["test"]] - test_pred) ** 2)
ss_tot = np.sum((y[parts["test"]] - y[parts["test"]].mean()) ** 2)
print(f"held-out R2 {1 - ss_res / ss_tot:.3f}")

# L is the scalar prediction, L-1 the hidden FC layer, L-2 the pooled embedding
for tap in ("L", "L-1", "L-2"):
    print(tap, gcn.tap_matrix(model, graphs[:5], tap).shape)

# finite differences agree with backprop
print("gradient check:", gcn.gradient_check(model, graphs[0], y[0]))
