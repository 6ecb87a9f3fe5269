"""Experiment protocol: train, nominate, select, embed, attack, measure.

A grid cell is one (dataset, scenario, strategy, selection, ratio, seed). Cells
sharing (dataset, scenario, seed) share their splits and initial model, so the
grid runner executes them as one job. Finished cells are written to
``<out>/cells/<key>.json`` and skipped on the next run.
"""
from __future__ import annotations

import concurrent.futures as cf
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics as M
from .data import Dataset, load_csv, split_indices
from .gbdt import Ensemble, TrainConfig, train
from .inplace import UpdateContext, inplace_update
from .watermark import (SCENARIOS, SELECTIONS, STRATEGIES, InsufficientCandidates,
                        build_embedding_plan, candidates, embed, select, watermark_counts)

log = logging.getLogger(__name__)

DATA_ENV = "GBDTWM_DATA"
THREADS_ENV = "GBDTWM_THREADS"

# files produced by scripts/prepare_datasets.py
BUILTIN = {
    "imgseg": ("segment.csv", None),
    "winequality": ("winequality_red.csv", None),
    "optdigits": ("optdigits_train.csv", "optdigits_test.csv"),
    "pendigits": ("pendigits.csv", None),
    "letter": ("letter.csv", None),
}
DISPLAY = {"imgseg": "Img Seg.", "winequality": "Wine Quality", "optdigits": "optdigits",
           "pendigits": "pendigits", "letter": "Letter Recognition", "avila": "Avila"}
STRATEGY_NAMES = {"cluster": "Cluster", "outlier": "Outlier", "wrong": "Wrong",
                  "confidence": "Conf.", "random": "Random"}


def data_dir() -> Path:
    env = os.environ.get(DATA_ENV)
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "data"


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    train: str
    test: Optional[str] = None
    label_column: object = -1
    header: bool = True

    @classmethod
    def builtin(cls, name) -> "DatasetSpec":
        if name not in BUILTIN:
            raise KeyError(f"unknown dataset {name!r}; built-ins are {sorted(BUILTIN)}")
        tr, te = BUILTIN[name]
        root = data_dir()
        return cls(name, str(root / tr), None if te is None else str(root / te))

    @classmethod
    def parse(cls, text) -> "DatasetSpec":
        """``name``, ``name=train.csv`` or ``name=train.csv,test.csv``."""
        if "=" not in text:
            return cls.builtin(text)
        name, paths = text.split("=", 1)
        parts = paths.split(",")
        return cls(name, parts[0], parts[1] if len(parts) > 1 else None)

    def fingerprint(self):
        return {"name": self.name, "train": Path(self.train).name,
                "test": None if self.test is None else Path(self.test).name,
                "label_column": self.label_column, "header": self.header}


@dataclass
class ExperimentConfig:
    datasets: list
    scenarios: list = field(default_factory=lambda: ["cand_eq_train"])
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    selections: list = field(default_factory=lambda: list(SELECTIONS))
    ratios: list = field(default_factory=lambda: [0.001, 0.01, 0.1])
    seeds: list = field(default_factory=lambda: [0])
    dup_factor: int = 5
    neighbors: int = 2
    train: TrainConfig = field(default_factory=TrainConfig)
    # "watermark": ratio = |W|/|D_train| and |C| = 2|W|; "candidate": ratio = |C|/|D_train|
    ratio_mode: str = "watermark"
    # "reduce": too few candidates -> k = floor(available/2); "skip": leave the cell empty
    shortfall_policy: str = "reduce"
    # "initial": resilience compares to the initial model's labels; "label": to the true labels
    resilience_reference: str = "initial"
    # context of the robustness attack: "union" (D_train + D_fine) or "fine_only"
    attack_mode: str = "union"
    train_split: float = 0.8
    test_split: float = 0.8

    def __post_init__(self):
        self.datasets = [d if isinstance(d, DatasetSpec) else
                         (DatasetSpec(**d) if isinstance(d, dict) else DatasetSpec.parse(d))
                         for d in self.datasets]
        if isinstance(self.train, dict):
            self.train = TrainConfig.from_dict(self.train)
        for s in self.scenarios:
            if s not in SCENARIOS:
                raise ValueError(f"unknown scenario {s!r}")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        for s in self.selections:
            if s not in SELECTIONS:
                raise ValueError(f"unknown selection {s!r}")
        if not self.ratios or any(not 0 < r < 1 for r in self.ratios):
            raise ValueError("ratios must be non-empty and inside (0, 1)")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.ratio_mode not in ("watermark", "candidate"):
            raise ValueError(f"unknown ratio_mode {self.ratio_mode!r}")
        if self.shortfall_policy not in ("reduce", "skip"):
            raise ValueError(f"unknown shortfall_policy {self.shortfall_policy!r}")
        if self.attack_mode not in ("union", "fine_only"):
            raise ValueError(f"unknown attack_mode {self.attack_mode!r}")
        if self.resilience_reference not in ("initial", "label"):
            raise ValueError(f"unknown resilience_reference {self.resilience_reference!r}")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("out", None)
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["datasets"] = [dataclasses.asdict(s) for s in self.datasets]
        return d

    def cells(self):
        for ds in self.datasets:
            for sc in self.scenarios:
                for seed in self.seeds:
                    for st in self.strategies:
                        for se in self.selections:
                            for r in self.ratios:
                                yield ds, sc, st, se, r, seed


# --------------------------------------------------------------------------
# one (dataset, scenario, seed) context


@dataclass(eq=False)
class Splits:
    train: Dataset
    cand: Dataset
    test: Dataset
    fine: Dataset


def load_dataset(spec: DatasetSpec):
    tr = load_csv(spec.train, spec.label_column, header=spec.header)
    if spec.test is None:
        return tr, None
    te = load_csv(spec.test, spec.label_column, header=spec.header)
    if te.n_features != tr.n_features:
        raise ValueError(f"{spec.name}: train/test feature counts differ")
    # put both files on one label coding
    names = list(tr.label_names)
    for n in te.label_names:
        if n not in names:
            names.append(n)
    remap = lambda ds: np.asarray([names.index(ds.label_names[c]) for c in ds.labels], dtype=np.int64)
    K = len(names)
    tr = Dataset(tr.features, remap(tr), K, tr.feature_names, tuple(names))
    te = Dataset(te.features, remap(te), K, te.feature_names, tuple(names))
    return tr, te


def make_splits(spec: DatasetSpec, scenario, seed, cfg: ExperimentConfig, loaded=None) -> Splits:
    tr, te = loaded if loaded is not None else load_dataset(spec)
    if te is None:
        a, b = split_indices(len(tr), cfg.train_split, seed)
        tr, te = tr.subset(a), tr.subset(b)
    if scenario == "cand_separate":
        a, b = split_indices(len(tr), cfg.train_split, seed + 1)
        train_ds, cand = tr.subset(a), tr.subset(b)
    else:
        train_ds = cand = tr
    a, b = split_indices(len(te), cfg.test_split, seed + 2)
    return Splits(train_ds, cand, te.subset(a), te.subset(b))


def initial_model(splits: Splits, cfg: ExperimentConfig, seed) -> Ensemble:
    return train(splits.train, dataclasses.replace(cfg.train, seed=seed))


def run_cell(cfg: ExperimentConfig, spec: DatasetSpec, scenario, strategy, selection, ratio, seed,
             splits: Optional[Splits] = None, model: Optional[Ensemble] = None) -> M.MetricsReport:
    rep = M.MetricsReport(spec.name, scenario, strategy, selection, ratio, seed)
    if splits is None:
        splits = make_splits(spec, scenario, seed, cfg)
    if model is None:
        model = initial_model(splits, cfg, seed)

    if cfg.ratio_mode == "watermark":
        k, n = watermark_counts(ratio, len(splits.train))
    else:
        n = max(2, math.ceil(ratio * len(splits.train) - 1e-9))
        k = n // 2
    rep.k, rep.n = k, n

    try:
        cset = candidates(strategy, model, splits.cand, n, seed, cfg.neighbors)
    except InsufficientCandidates as e:
        rep.shortfall, rep.k, rep.error = True, 0, str(e)
        return rep
    if cset.shortfall:
        rep.shortfall = True
        if cfg.shortfall_policy == "skip":
            rep.k = 0
            return rep
        k = len(cset) // 2
        rep.k, rep.n = k, len(cset)
        if k == 0:
            return rep

    wset = select(selection, cset, k, seed)
    plan = build_embedding_plan(wset, scenario, cfg.dup_factor, cand=splits.cand)
    model_wm, _ = embed(model, plan, splits.train)

    X_wm, y_wm = wset.watermark_arrays()
    rep.a_wm = M.effectiveness(model_wm, X_wm, y_wm)
    rep.a_model = M.general_accuracy(model_wm, splits.test.features, splits.test.labels)
    rep.a_model_adj = M.adjusted(rep.a_model, rep.a_wm)
    X_rest, y_rest, _ = wset.rest_arrays()
    rep.resilience = M.candidate_resilience(model, model_wm, X_rest, y_rest,
                                            literal=cfg.resilience_reference == "label")
    rep.resilience_adj = M.adjusted(rep.resilience, rep.a_wm)

    attacked, _ = inplace_update(model_wm, UpdateContext(splits.train, splits.fine, cfg.attack_mode))
    rep.robustness = M.robustness(model_wm, attacked, X_wm, y_wm)
    return rep


# --------------------------------------------------------------------------
# grid


def cell_key(cfg: ExperimentConfig, spec, scenario, strategy, selection, ratio, seed):
    blob = json.dumps({
        "dataset": spec.fingerprint(), "scenario": scenario, "strategy": strategy,
        "selection": selection, "ratio": ratio, "seed": seed, "train": cfg.train.to_dict(),
        "dup": cfg.dup_factor, "l": cfg.neighbors, "ratio_mode": cfg.ratio_mode,
        "shortfall": cfg.shortfall_policy, "resilience": cfg.resilience_reference,
        "attack": cfg.attack_mode,
        "splits": [cfg.train_split, cfg.test_split],
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def _run_group(cfg: ExperimentConfig, spec, scenario, seed, todo, cell_dir):
    """Run the listed (strategy, selection, ratio) cells on one shared initial model."""
    done = []
    try:
        splits = make_splits(spec, scenario, seed, cfg)
        model = initial_model(splits, cfg, seed)
    except Exception as e:  # noqa: BLE001 - isolate the whole group
        log.exception("setup failed for %s/%s/seed %s", spec.name, scenario, seed)
        for st, se, r, key in todo:
            rep = M.MetricsReport(spec.name, scenario, st, se, r, seed, error=f"setup: {e}")
            _write_cell(cell_dir, key, rep)
            done.append(key)
        return done
    for st, se, r, key in todo:
        try:
            rep = run_cell(cfg, spec, scenario, st, se, r, seed, splits, model)
        except Exception as e:  # noqa: BLE001 - per-cell isolation
            log.exception("cell failed: %s %s %s %s %s", spec.name, scenario, st, se, r)
            rep = M.MetricsReport(spec.name, scenario, st, se, r, seed, error=repr(e))
        _write_cell(cell_dir, key, rep)
        log.info("cell %s %s %s(%s) ratio=%s seed=%s a_wm=%s", spec.name, scenario, st, se, r,
                 seed, rep.a_wm)
        done.append(key)
    return done


def _write_cell(cell_dir: Path, key, rep):
    tmp = cell_dir / f"{key}.json.tmp"
    tmp.write_text(json.dumps(rep.to_dict(), sort_keys=True) + "\n")
    tmp.replace(cell_dir / f"{key}.json")


def _workers():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_grid(cfg: ExperimentConfig, out) -> list:
    """Run every missing cell, then (re)write results.csv, results.json and tables.md."""
    out = Path(out)
    cell_dir = out / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    groups = {}
    order = []
    for ds, sc, st, se, r, seed in cfg.cells():
        key = cell_key(cfg, ds, sc, st, se, r, seed)
        order.append(key)
        if not (cell_dir / f"{key}.json").exists():
            groups.setdefault((ds, sc, seed), []).append((st, se, r, key))

    workers = min(_workers(), max(1, len(groups)))
    if workers == 1:
        for (ds, sc, seed), todo in groups.items():
            _run_group(cfg, ds, sc, seed, todo, cell_dir)
    else:
        with cf.ProcessPoolExecutor(workers) as pool:
            futs = [pool.submit(_run_group, cfg, ds, sc, seed, todo, cell_dir)
                    for (ds, sc, seed), todo in groups.items()]
            for f in cf.as_completed(futs):
                f.result()

    reports = [M.MetricsReport(**json.loads((cell_dir / f"{k}.json").read_text())) for k in order]
    write_reports(reports, out, [d.name for d in cfg.datasets], cfg.ratios)
    return reports


def write_reports(reports, out, dataset_order=None, ratios=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(M.COLUMNS)
        for r in reports:
            w.writerow(["" if v is None else v for v in r.row()])
    with open(out / "results.json", "w") as fh:
        json.dump([dict(zip(M.COLUMNS, r.row())) for r in reports], fh, indent=1)
        fh.write("\n")
    (out / "tables.md").write_text(format_tables(reports, dataset_order, ratios))


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return sum(vals) / len(vals) if vals else None


def table(reports, metric, scenario, dataset_order=None, ratios=None):
    """Rows "Strategy (Sel)", columns dataset x ratio plus a per-ratio average.

    Seeds are averaged first; the average column is the mean of the defined
    dataset cells in its row.
    """
    rs = [r for r in reports if r.scenario == scenario]
    datasets = dataset_order or sorted({r.dataset for r in rs})
    ratios = ratios or sorted({r.ratio for r in rs})
    head = ["Method"] + [f"{DISPLAY.get(d, d)} {r:g}" for d in datasets for r in ratios] + \
           [f"average {r:g}" for r in ratios]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for st in STRATEGIES:
        for se in SELECTIONS:
            cell = {}
            for d in datasets:
                for ra in ratios:
                    vals = [getattr(r, metric) for r in rs
                            if (r.dataset, r.strategy, r.selection, r.ratio) == (d, st, se, ra)]
                    if vals:
                        cell[d, ra] = _mean(vals)
            if not cell:
                continue
            row = [f"{STRATEGY_NAMES[st]} ({se.capitalize()})"]
            row += [_fmt(cell.get((d, ra))) for d in datasets for ra in ratios]
            row += [_fmt(_mean([cell.get((d, ra)) for d in datasets])) for ra in ratios]
            lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


def _fmt(v):
    return "---" if v is None else f"{v:.3f}"


def format_tables(reports, dataset_order=None, ratios=None):
    titles = [("a_wm", "Watermark effectiveness"), ("a_model_adj", "Adjusted model accuracy"),
              ("robustness", "Fine-tuning robustness"), ("resilience_adj", "Adjusted candidate resilience"),
              ("a_model", "Model accuracy")]
    parts = []
    for sc in SCENARIOS:
        if not any(r.scenario == sc for r in reports):
            continue
        for metric, title in titles:
            parts.append(f"## {title} ({sc})\n\n{table(reports, metric, sc, dataset_order, ratios)}\n")
    return "\n".join(parts)
