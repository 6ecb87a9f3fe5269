"""In-place fine-tuning: rechecking splits instead of adding trees.

Run from the repository root:  python demos/02_inplace_update.py
"""
# %% A small model on Image Segmentation
import numpy as np

from gbdtwm.data import Dataset, split
from gbdtwm.gbdt import TrainConfig, train
from gbdtwm.harness import DatasetSpec, load_dataset
from gbdtwm.inplace import UpdateContext, inplace_update

seg, _ = load_dataset(DatasetSpec.builtin("imgseg"))
train_ds, new_ds = split(seg, 0.8, seed=1)
model = train(train_ds, TrainConfig(iterations=30, seed=1))

# %% With nothing new to learn, the update reproduces the model exactly
empty = Dataset.empty(seg.n_features, seg.n_classes)
same, rep = inplace_update(model, UpdateContext(train_ds, empty))
diff = np.abs(same.predict_raw(seg.features) - model.predict_raw(seg.features)).max()
print(f"no-op update: {rep.rechecked} nodes rechecked, {rep.retrained} retrained, max diff {diff}")

# %% New rows move some optimal splits; only those subtrees are regrown
updated, rep = inplace_update(model, UpdateContext(train_ds, new_ds))
print(f"update with {len(new_ds)} rows: {rep.rechecked} rechecked, {rep.retrained} retrained, "
      f"{rep.leaves_refit} leaves refit")
for ev in rep.events[:5]:
    print(f"  tree ({ev.iteration},{ev.klass}) node '{ev.path or 'root'}': {ev.old} -> {ev.new}, "
          f"budget {ev.leaf_budget} leaves")

# %% The ensemble keeps its size
print("trees before/after:", sum(1 for _ in model.all_trees()), sum(1 for _ in updated.all_trees()))
