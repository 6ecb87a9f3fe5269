"""In-place fine-tuning of a trained ensemble.

Nothing is added or removed: each existing tree is revisited in training
order, its internal nodes are re-split-checked top-down against gradients
computed at the already-updated preceding trees, any node whose best split
moved has its subtree regrown with the same leaf count, and finally every leaf
value is refit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, concat
from .gbdt import (Ensemble, Node, SplitSpec, Tree, best_split, boosting_gradients, grow_tree,
                   leaf_value, partition, predict_tree, route)

log = logging.getLogger(__name__)

THRESHOLD_TOL = 1e-12
UNCHANGED = "unchanged"
RETRAIN = "retrain"


@dataclass(frozen=True, eq=False)
class UpdateContext:
    """``context_data`` keeps its true labels; ``fine_data`` carries the labels to learn."""

    context_data: Optional[Dataset]
    fine_data: Dataset
    mode: str = "union"

    def __post_init__(self):
        if self.mode not in ("union", "fine_only"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "union":
            if self.context_data is None:
                raise ValueError("union mode needs context_data")
            if self.context_data.n_features != self.fine_data.n_features:
                raise ValueError("context and fine data have different feature counts")
        elif len(self.fine_data) == 0:
            raise ValueError("fine_only mode with an empty fine dataset")

    def combined(self) -> Dataset:
        if self.mode == "fine_only":
            return self.fine_data
        if len(self.fine_data) == 0:
            return self.context_data
        return concat([self.context_data, self.fine_data])


@dataclass
class TreeUpdate:
    iteration: int
    klass: int
    rechecked: int = 0
    retrained: int = 0
    leaves_refit: int = 0


@dataclass
class RetrainEvent:
    iteration: int
    klass: int
    path: str  # "" for the root, then L/R per level
    old: tuple  # (feature, threshold)
    new: Optional[tuple]  # None when no split is worth making any more
    leaf_budget: int


@dataclass
class UpdateReport:
    trees: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def rechecked(self):
        return sum(t.rechecked for t in self.trees)

    @property
    def retrained(self):
        return sum(t.retrained for t in self.trees)

    @property
    def leaves_refit(self):
        return sum(t.leaves_refit for t in self.trees)

    def to_dict(self):
        return {
            "totals": {"rechecked": self.rechecked, "retrained": self.retrained,
                       "leaves_refit": self.leaves_refit},
            "trees": [[t.iteration, t.klass, t.rechecked, t.retrained, t.leaves_refit]
                      for t in self.trees],
            "events": [{"iteration": e.iteration, "class": e.klass, "path": e.path,
                        "old": list(e.old), "new": None if e.new is None else list(e.new),
                        "leaf_budget": e.leaf_budget} for e in self.events],
        }


def split_differs(node: Node, split: Optional[SplitSpec]) -> bool:
    if split is None:
        return True
    return split.feature != node.feature or abs(split.threshold - node.threshold) > THRESHOLD_TOL


def _recheck(node, ids, X, g, h, feats, reg_lambda, min_child_hessian):
    if ids.size == 0:
        return UNCHANGED, None
    s = best_split(ids, g, h, X, feats, reg_lambda, min_child_hessian)
    return (RETRAIN if split_differs(node, s) else UNCHANGED), s


def recheck_node(node, routed_samples, g, h, X, feature_subset, reg_lambda=1.0,
                 min_child_hessian=1e-3) -> str:
    """``"retrain"`` if the best split over ``routed_samples`` is not the stored one.

    Nodes that receive no samples are left alone.
    """
    if node.is_leaf:
        raise ValueError("recheck_node expects an internal node")
    ids = np.asarray(routed_samples, dtype=np.int64)
    return _recheck(node, ids, X, g, h, feature_subset, reg_lambda, min_child_hessian)[0]


def _update_tree(tree: Tree, X, g, h, cfg, stats: TreeUpdate, events: list):
    ids = np.arange(X.shape[0], dtype=np.int64)
    stack = [(tree.root, ids, "")]
    while stack:
        node, idx, path = stack.pop()
        if node.is_leaf:
            continue
        if idx.size:
            stats.rechecked += 1
        verdict, s = _recheck(node, idx, X, g, h, tree.feature_subset, cfg.reg_lambda,
                              cfg.min_child_hessian)
        if verdict == RETRAIN:
            budget = node.n_leaves()
            fresh = grow_tree(X, g, h, idx, tree.feature_subset, budget, cfg.reg_lambda,
                              cfg.min_child_hessian, cfg.shrinkage)
            old = (node.feature, node.threshold)
            if fresh.is_leaf:
                node.feature, node.threshold, node.gain = -1, 0.0, 0.0
                node.left = node.right = None
                node.value = fresh.value
            else:
                node.feature, node.threshold, node.gain = fresh.feature, fresh.threshold, fresh.gain
                node.left, node.right, node.value = fresh.left, fresh.right, 0.0
            stats.retrained += 1
            events.append(RetrainEvent(tree.iteration, tree.klass, path, old,
                                       None if s is None else (s.feature, s.threshold), budget))
            log.debug("retrained (%d,%d) node %r: %s -> %s", tree.iteration, tree.klass, path,
                      old, None if s is None else (s.feature, s.threshold))
            # the regrown subtree is already optimal for these samples
            continue
        if idx.size == 0:
            # no evidence reaches this subtree: keep structure and leaves
            continue
        li, ri = partition(X, idx, node)
        stack.append((node.right, ri, path + "R"))
        stack.append((node.left, li, path + "L"))

    for node, idx in route(tree.root, X, ids):
        if node.is_leaf and idx.size:
            node.value = leaf_value(idx, g, h, cfg.reg_lambda, cfg.shrinkage)
            stats.leaves_refit += 1


def inplace_update(ensemble: Ensemble, ctx: UpdateContext):
    """Return ``(updated_copy, UpdateReport)``; the input ensemble is untouched."""
    data = ctx.combined()
    if data.n_features != ensemble.n_features:
        raise ValueError(f"dimension mismatch: data has {data.n_features} features, "
                         f"model has {ensemble.n_features}")
    if len(ctx.fine_data) and ctx.fine_data.labels.max() >= ensemble.n_classes:
        raise ValueError("fine-tuning labels outside the model's classes")
    X = data.features
    y = data.labels
    cfg = ensemble.config
    out = ensemble.copy()
    report = UpdateReport()
    scores = np.tile(np.asarray(out.base_score, dtype=np.float64), (X.shape[0], 1))
    for row in out.trees:
        gs, hs = boosting_gradients(y, scores)
        for t in row:
            stats = TreeUpdate(t.iteration, t.klass)
            _update_tree(t, X, gs[t.klass], hs[t.klass], cfg, stats, report.events)
            report.trees.append(stats)
        for t in row:
            scores[:, t.klass] += predict_tree(t.root, X)
    return out, report


def finetune(ensemble: Ensemble, fine_dataset: Dataset, context_dataset: Dataset) -> Ensemble:
    """One in-place pass over the union of ``context_dataset`` and ``fine_dataset``."""
    return inplace_update(ensemble, UpdateContext(context_dataset, fine_dataset, "union"))[0]
