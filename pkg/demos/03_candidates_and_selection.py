"""Nominating watermark candidates and picking the watermark subset.

Run from the repository root:  python demos/03_candidates_and_selection.py
"""
# %% Train a baseline on Image Segmentation
import numpy as np

from gbdtwm.data import split
from gbdtwm.gbdt import TrainConfig, train
from gbdtwm.harness import DatasetSpec, load_dataset
from gbdtwm.watermark import STRATEGIES, candidates, select, watermark_counts

seg, _ = load_dataset(DatasetSpec.builtin("imgseg"))
train_ds, _ = split(seg, 0.8, seed=0)
model = train(train_ds, TrainConfig(iterations=30))
k, n = watermark_counts(0.01, len(train_ds))
print(f"ratio 0.01 of {len(train_ds)} rows -> k = {k} watermarks from n = {n} candidates")

# %% Each strategy nominates n rows from the candidate data
for strategy in STRATEGIES:
    cs = candidates(strategy, model, train_ds, n, seed=0)
    conf = np.mean([c.conf_pred for c in cs.candidates]) if len(cs) else float("nan")
    note = " (shortfall)" if cs.shortfall else ""
    print(f"{strategy:10s} {len(cs):3d} candidates, mean predicted-class score {conf:6.2f}{note}")

# %% Cluster centres carry neighbours that keep their true labels
cs = candidates("cluster", model, train_ds, n, seed=0, l=2)
first = cs.candidates[0]
print(f"centre row {first.index} -> neighbours {cs.neighbors[first.index]}")

# %% Lowest confidence vs maximum spread
for selection in ("conf", "dist"):
    ws = select(selection, candidates("confidence", model, train_ds, n), k, seed=0)
    idx = [e.candidate.index for e in ws.entries]
    labels = [(e.candidate.y_true, e.y_wm) for e in ws.entries[:4]]
    print(f"{selection}: rows {idx[:6]}... (true, watermark) labels {labels}")
