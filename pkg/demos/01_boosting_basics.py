"""Training a softmax GBDT and looking inside it.

Run from the repository root:  python demos/01_boosting_basics.py
"""
# %% Load red Wine Quality and hold out a test split
import numpy as np

from gbdtwm.data import split
from gbdtwm.gbdt import TrainConfig, grad_hess, nll_loss, train
from gbdtwm.harness import DatasetSpec, load_dataset

wine, _ = load_dataset(DatasetSpec.builtin("winequality"))
train_ds, test_ds = split(wine, 0.8, seed=0)
print(f"{len(train_ds)} train rows, {len(test_ds)} test rows, {wine.n_classes} classes")

# %% Gradients are p - onehot, hessians p(1 - p)
t = grad_hess([2], np.zeros((1, wine.n_classes)))
print("gradient at uniform scores:", np.round(t.grad[0], 3))
print("hessian  at uniform scores:", np.round(t.hess[0], 3))

# %% Fit a short model: one tree per class per round
cfg = TrainConfig(iterations=40)
model = train(train_ds, cfg)
print(f"{model.n_iterations} rounds x {model.n_classes} classes = "
      f"{sum(1 for _ in model.all_trees())} trees")

# %% The training loss falls round by round
losses = [nll_loss(train_ds.labels, s) for s in model.staged_predict_raw(train_ds.features)]
for m in (0, 10, 20, 40):
    print(f"round {m:3d}  loss {losses[m]:.1f}")

# %% Each tree only sees its own replayable feature subset
t0 = model.trees[0][0]
print("tree (0,0) features:", t0.feature_subset, "leaves:", t0.root.n_leaves())
acc = np.mean(model.predict(test_ds.features) == test_ds.labels)
print(f"test accuracy after 40 rounds: {acc:.3f}")
