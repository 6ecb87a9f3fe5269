"""Embedding a watermark, measuring it, and fine-tuning it away (or not).

Run from the repository root:  python demos/04_embed_and_attack.py
"""
# %% Splits as in the evaluation protocol, with a short model to keep this quick
from gbdtwm import metrics as M
from gbdtwm.gbdt import TrainConfig
from gbdtwm.harness import ExperimentConfig, initial_model, make_splits
from gbdtwm.inplace import UpdateContext, inplace_update
from gbdtwm.watermark import build_embedding_plan, candidates, embed, select, watermark_counts

cfg = ExperimentConfig(datasets=["imgseg"], train=TrainConfig(iterations=40))
sp = make_splits(cfg.datasets[0], "cand_eq_train", 0, cfg)
model = initial_model(sp, cfg, 0)
print(f"D_train {len(sp.train)}, D_test {len(sp.test)}, D_fine {len(sp.fine)}")

# %% Confidence Flip with lowest-confidence selection, duplicated 5 times
k, n = watermark_counts(0.01, len(sp.train))
wset = select("conf", candidates("confidence", model, sp.cand, n), k)
plan = build_embedding_plan(wset, "cand_eq_train", dup_factor=5, cand=sp.cand)
marked, rep = embed(model, plan, sp.train)
print(f"{len(plan)} fine-tuning rows, {rep.retrained} subtrees regrown")

# %% Effectiveness, accuracy, and what happened to the other candidates
X, y = wset.watermark_arrays()
a_wm = M.effectiveness(marked, X, y)
acc0 = M.general_accuracy(model, sp.test.features, sp.test.labels)
acc = M.general_accuracy(marked, sp.test.features, sp.test.labels)
Xr, yr, _ = wset.rest_arrays()
print(f"A_wm {a_wm:.3f}  accuracy {acc0:.3f} -> {acc:.3f}  adjusted {M.adjusted(acc, a_wm):.3f}")
print(f"candidate resilience {M.candidate_resilience(model, marked, Xr):.3f}")

# %% A later fine-tune on fresh labelled data
for mode, ctx in (("union", sp.train), ("fine_only", None)):
    attacked, _ = inplace_update(marked, UpdateContext(ctx, sp.fine, mode))
    print(f"robustness after a {mode} fine-tune: {M.robustness(marked, attacked, X, y)}")

# %% The key file is what an owner keeps to verify ownership later
wset.save("/tmp/demo_key.json")
print("key written to /tmp/demo_key.json")
