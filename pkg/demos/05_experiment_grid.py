"""A miniature evaluation grid with tables.

Run from the repository root:  python demos/05_experiment_grid.py
Results land in /tmp/gbdtwm_demo_grid; rerunning skips finished cells.
"""
# %% Configure a small grid
from pathlib import Path

from gbdtwm.gbdt import TrainConfig
from gbdtwm.harness import ExperimentConfig, run_grid

cfg = ExperimentConfig(
    datasets=["imgseg"],
    scenarios=["cand_eq_train", "cand_separate"],
    strategies=["cluster", "confidence", "random"],
    selections=["conf"],
    ratios=[0.01],
    seeds=[0],
    train=TrainConfig(iterations=30),
)
out = Path("/tmp/gbdtwm_demo_grid")

# %% Run it (cells sharing a dataset, scenario and seed reuse one initial model)
reports = run_grid(cfg, out)
for r in reports:
    print(f"{r.scenario:14s} {r.strategy:10s} A_wm={r.a_wm:.3f} A_model={r.a_model:.3f} "
          f"robustness={r.robustness}")

# %% Tables in the usual layout, with an average column
print((out / "tables.md").read_text().split("\n\n## ")[0])
