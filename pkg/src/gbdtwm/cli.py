"""Command line: ``gbdtwm {train,watermark,finetune,eval,experiment}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import metrics as M
from .data import DataError, load_csv
from .gbdt import TrainConfig, train
from .harness import ExperimentConfig, run_grid
from .inplace import UpdateContext, inplace_update
from .model_io import ModelFormatError, load_model, save_model
from .watermark import (SCENARIOS, SELECTIONS, STRATEGIES, InsufficientCandidates, WatermarkSet,
                        build_embedding_plan, candidates, embed, select, watermark_counts)


class UsageError(Exception):
    pass


def _train_flags(p, defaults=True):
    d = TrainConfig() if defaults else None
    p.add_argument("--iterations", type=int, default=d and d.iterations)
    p.add_argument("--shrinkage", type=float, default=d and d.shrinkage)
    p.add_argument("--max-leaves", type=int, default=d and d.max_leaves)
    p.add_argument("--feature-sampling", type=float, default=d and d.feature_sampling)
    p.add_argument("--lambda", dest="reg_lambda", type=float, default=d and d.reg_lambda)


def _train_config(a, base=None):
    base = base or TrainConfig()
    over = {k: getattr(a, k) for k in
            ("iterations", "shrinkage", "max_leaves", "feature_sampling", "reg_lambda")
            if getattr(a, k, None) is not None}
    # the experiment command takes a seed list; each grid cell sets its own training seed
    if isinstance(getattr(a, "seed", None), int):
        over["seed"] = a.seed
    cfg = dataclasses.replace(base, **over)
    if cfg.iterations < 1 or cfg.max_leaves < 2 or not 0 < cfg.feature_sampling <= 1 \
            or cfg.shrinkage <= 0 or cfg.reg_lambda < 0:
        raise UsageError(f"invalid training parameters: {cfg}")
    return cfg


def _load(path, a):
    return load_csv(path, a.label_column, header=not a.no_header)


def _data_flags(p):
    p.add_argument("--label-column", default=-1,
                   type=lambda s: int(s) if s.lstrip("-").isdigit() else s,
                   help="label column index or header name (default: last)")
    p.add_argument("--no-header", action="store_true")


def cmd_train(a):
    ds = _load(a.dataset, a)
    model = train(ds, _train_config(a))
    save_model(model, a.out)
    acc = M.general_accuracy(model, ds.features, ds.labels)
    print(json.dumps({"model": a.out, "rows": len(ds), "train_accuracy": acc}))


def cmd_watermark(a):
    model = load_model(a.model)
    cand = _load(a.dataset, a)
    context = _load(a.context, a) if a.context else cand
    if cand.n_features != model.n_features:
        raise UsageError("dataset feature count does not match the model")
    if a.k is not None:
        k, n = a.k, 2 * a.k
    else:
        k, n = watermark_counts(a.ratio, len(context))
    cset = candidates(a.strategy, model, cand, n, a.seed, a.neighbors)
    if cset.shortfall:
        k = len(cset) // 2
        print(f"warning: only {len(cset)} candidates available, embedding {k}", file=sys.stderr)
        if k == 0:
            raise InsufficientCandidates("no watermark can be embedded")
    wset = select(a.selection, cset, k, a.seed)
    plan = build_embedding_plan(wset, a.scenario, a.dup_factor, cand=cand)
    wm, report = embed(model, plan, context)
    save_model(wm, a.out)
    key = a.key or str(Path(a.out).with_suffix("")) + ".key.json"
    wset.save(key)
    X, y = wset.watermark_arrays()
    print(json.dumps({"model": a.out, "key": key, "k": k, "n": len(cset),
                      "a_wm": M.effectiveness(wm, X, y),
                      "retrained": report.retrained, "rechecked": report.rechecked}))


def cmd_finetune(a):
    model = load_model(a.model)
    fine = _load(a.dataset, a)
    context = _load(a.context, a) if a.context else None
    mode = "union" if context is not None else "fine_only"
    out, report = inplace_update(model, UpdateContext(context, fine, mode))
    save_model(out, a.out)
    print(json.dumps({"model": a.out, "mode": mode, "retrained": report.retrained,
                      "rechecked": report.rechecked}))


def cmd_eval(a):
    model = load_model(a.model)
    res = {}
    if a.dataset:
        ds = _load(a.dataset, a)
        res["a_model"] = M.general_accuracy(model, ds.features, ds.labels)
    if a.key:
        wset = WatermarkSet.load(a.key)
        X, y = wset.watermark_arrays()
        if y.size:
            res["a_wm"] = M.effectiveness(model, X, y)
        if a.watermarked:
            res["robustness"] = M.robustness(load_model(a.watermarked), model, X, y)
        if a.initial:
            Xr, yr, _ = wset.rest_arrays()
            res["resilience"] = M.candidate_resilience(load_model(a.initial), model, Xr, yr)
    elif a.watermarked or a.initial:
        raise UsageError("--watermarked and --initial need --key")
    if not res:
        raise UsageError("nothing to evaluate: pass --dataset and/or --key")
    print(json.dumps(res))


def cmd_experiment(a):
    base = {}
    if a.config:
        with open(a.config) as fh:
            base = json.load(fh)
    if a.dataset:
        base["datasets"] = a.dataset
    if "datasets" not in base:
        raise UsageError("no datasets: pass --dataset or a --config with 'datasets'")
    for flag, key in (("scenario", "scenarios"), ("strategy", "strategies"),
                      ("selection", "selections"), ("ratio", "ratios"), ("seed", "seeds")):
        v = getattr(a, flag)
        if v:
            base[key] = v
    if a.dup_factor is not None:
        base["dup_factor"] = a.dup_factor
    if a.neighbors is not None:
        base["neighbors"] = a.neighbors
    if a.attack_mode:
        base["attack_mode"] = a.attack_mode
    cfg = ExperimentConfig.from_dict(base)
    cfg.train = _train_config(a, cfg.train)
    out = a.out or (base.get("out") if isinstance(base.get("out"), str) else None) or "results"
    reports = run_grid(cfg, out)
    failed = sum(r.error is not None and not r.shortfall for r in reports)
    print(json.dumps({"out": out, "cells": len(reports), "failed": failed}))


def build_parser():
    p = argparse.ArgumentParser(prog="gbdtwm", description="GBDT watermarking toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a CSV file")
    t.add_argument("--dataset", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    _train_flags(t)
    _data_flags(t)
    t.set_defaults(func=cmd_train)

    w = sub.add_parser("watermark", help="embed a watermark into a model")
    w.add_argument("--model", required=True)
    w.add_argument("--dataset", required=True, help="candidate data")
    w.add_argument("--context", help="training data kept in the update statistics "
                                     "(default: the candidate data)")
    w.add_argument("--strategy", choices=STRATEGIES, default="confidence")
    w.add_argument("--selection", choices=SELECTIONS, default="conf")
    w.add_argument("--scenario", choices=SCENARIOS, default="cand_eq_train")
    g = w.add_mutually_exclusive_group()
    g.add_argument("--ratio", type=float, default=0.01)
    g.add_argument("--k", type=int)
    w.add_argument("--dup-factor", type=int, default=5)
    w.add_argument("--neighbors", type=int, default=2)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--key", help="key file path (default: <out>.key.json)")
    w.add_argument("--out", required=True)
    _data_flags(w)
    w.set_defaults(func=cmd_watermark)

    f = sub.add_parser("finetune", help="in-place fine-tune a model on new data")
    f.add_argument("--model", required=True)
    f.add_argument("--dataset", required=True)
    f.add_argument("--context", help="original training data (omit for fine-only updates)")
    f.add_argument("--out", required=True)
    _data_flags(f)
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("eval", help="accuracy and watermark metrics")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", help="labelled test data")
    e.add_argument("--key", help="watermark key file")
    e.add_argument("--watermarked", help="watermarked model before fine-tuning (robustness)")
    e.add_argument("--initial", help="model before watermarking (candidate resilience)")
    _data_flags(e)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="run the evaluation grid")
    x.add_argument("--config", help="JSON experiment config")
    x.add_argument("--dataset", action="append",
                   help="built-in name or name=train.csv[,test.csv]; repeatable")
    x.add_argument("--scenario", action="append", choices=SCENARIOS)
    x.add_argument("--strategy", action="append", choices=STRATEGIES)
    x.add_argument("--selection", action="append", choices=SELECTIONS)
    x.add_argument("--ratio", action="append", type=float)
    x.add_argument("--seed", action="append", type=int)
    x.add_argument("--dup-factor", type=int)
    x.add_argument("--neighbors", type=int)
    x.add_argument("--attack-mode", choices=("union", "fine_only"))
    x.add_argument("--out")
    _train_flags(x, defaults=False)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        a.func(a)
    except (UsageError, DataError, ModelFormatError, InsufficientCandidates, ValueError,
            KeyError, FileNotFoundError) as e:
        print(f"gbdtwm: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
