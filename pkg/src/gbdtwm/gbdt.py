"""Multiclass softmax gradient boosting with exact, leaf-wise grown trees.

Every tree stores the feature subset it was grown on, and that subset can be
re-derived from ``(seed, iteration, class)``; the in-place updater relies on
both facts.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import asdict, dataclass
from typing import Iterator, Optional

import numpy as np

from .data import Dataset

# Gains at or below this are treated as "no improvement"; an exactly uniform
# gradient yields gains of order 1e-16 from rounding alone.
MIN_GAIN = 1e-12
# gains this close (relative) count as tied, so tie-breaks survive summation-order rounding
TIE_RTOL = 1e-12
LOG_FLOOR = 1e-15


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    shrinkage: float = 0.1
    max_leaves: int = 20
    feature_sampling: float = 0.1
    reg_lambda: float = 1.0
    min_child_hessian: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.shrinkage <= 0:
            raise ValueError("shrinkage must be > 0")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2")
        if not 0 < self.feature_sampling <= 1:
            raise ValueError("feature_sampling must be in (0, 1]")
        if self.reg_lambda < 0 or self.min_child_hessian < 0:
            raise ValueError("reg_lambda and min_child_hessian must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


# --------------------------------------------------------------------------
# loss, probabilities, derivatives


def softmax(scores):
    """Row-wise softmax; works on a single score vector or an (N, K) matrix."""
    s = np.asarray(scores, dtype=np.float64)
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(labels, K):
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    return y


@dataclass(frozen=True, eq=False)
class GradHessTable:
    grad: np.ndarray
    hess: np.ndarray
    proba: np.ndarray

    @property
    def residual(self):
        return -self.grad


def grad_hess(labels, raw_scores) -> GradHessTable:
    raw = np.atleast_2d(np.asarray(raw_scores, dtype=np.float64))
    y = _check_labels(labels, raw.shape[1])
    p = softmax(raw)
    g = p.copy()
    g[np.arange(len(y)), y] -= 1.0
    return GradHessTable(g, p * (1.0 - p), p)


def nll_loss(labels, raw_scores) -> float:
    raw = np.atleast_2d(np.asarray(raw_scores, dtype=np.float64))
    y = _check_labels(labels, raw.shape[1])
    p = softmax(raw)[np.arange(len(y)), y]
    return float(-np.sum(np.log(np.maximum(p, LOG_FLOOR))))


# --------------------------------------------------------------------------
# trees


class Node:
    """Internal node (``left``/``right`` set) or leaf (``value`` set).

    Samples with ``x[feature] <= threshold`` go left.
    """

    __slots__ = ("feature", "threshold", "gain", "left", "right", "value")

    def __init__(self, feature=-1, threshold=0.0, gain=0.0, left=None, right=None, value=0.0):
        self.feature = feature
        self.threshold = threshold
        self.gain = gain
        self.left = left
        self.right = right
        self.value = value

    @classmethod
    def leaf(cls, value=0.0):
        return cls(value=value)

    @property
    def is_leaf(self):
        return self.left is None

    def make_internal(self, split, left, right):
        self.feature, self.threshold, self.gain = split.feature, split.threshold, split.gain
        self.left, self.right, self.value = left, right, 0.0

    def n_leaves(self):
        return sum(1 for _ in self.leaves())

    def leaves(self):
        stack = [self]
        while stack:
            n = stack.pop()
            if n.is_leaf:
                yield n
            else:
                stack.append(n.right)
                stack.append(n.left)

    def internal_nodes(self):
        """Pre-order (top-down, left first) walk over internal nodes."""
        stack = [self]
        while stack:
            n = stack.pop()
            if not n.is_leaf:
                yield n
                stack.append(n.right)
                stack.append(n.left)

    def copy(self):
        if self.is_leaf:
            return Node.leaf(self.value)
        return Node(self.feature, self.threshold, self.gain, self.left.copy(), self.right.copy())


@dataclass(eq=False)
class Tree:
    root: Node
    iteration: int
    klass: int
    feature_subset: tuple

    def predict(self, X):
        return predict_tree(self.root, X)

    def copy(self):
        return Tree(self.root.copy(), self.iteration, self.klass, self.feature_subset)


def route(root: Node, X, ids) -> Iterator[tuple]:
    """Yield ``(node, ids)`` for every node reached, parents before children."""
    stack = [(root, ids)]
    while stack:
        node, idx = stack.pop()
        yield node, idx
        if not node.is_leaf:
            go_left = X[idx, node.feature] <= node.threshold
            stack.append((node.right, idx[~go_left]))
            stack.append((node.left, idx[go_left]))


def predict_tree(root: Node, X):
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0])
    for node, idx in route(root, X, np.arange(X.shape[0])):
        if node.is_leaf:
            out[idx] = node.value
    return out


# --------------------------------------------------------------------------
# split search and growth


@dataclass(frozen=True)
class SplitSpec:
    feature: int
    threshold: float
    gain: float


def _midpoint(a, b):
    t = (a + b) * 0.5
    return a if t >= b else t


def _tol(gain):
    return TIE_RTOL * max(1.0, abs(gain))


def best_split(sample_ids, g, h, X, feature_subset, reg_lambda=1.0, min_child_hessian=1e-3
               ) -> Optional[SplitSpec]:
    """Exact greedy search for the highest second-order gain split.

    ``g``/``h`` are indexed by sample id, like the rows of ``X``. Candidate
    thresholds are midpoints between adjacent distinct values. Ties go to the
    lower feature index, then the lower threshold. Returns ``None`` when no
    split beats :data:`MIN_GAIN` with both children at ``min_child_hessian``.
    """
    ids = np.asarray(sample_ids, dtype=np.int64)
    if ids.size < 2:
        return None
    gn = g[ids]
    hn = h[ids]
    G = gn.sum()
    H = hn.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        parent = G * G / (H + reg_lambda) if H + reg_lambda > 0 else 0.0
    best = None
    for f in sorted(feature_subset):
        x = X[ids, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        distinct = xs[:-1] < xs[1:]
        if not distinct.any():
            continue
        gl = np.cumsum(gn[order])[:-1]
        hl = np.cumsum(hn[order])[:-1]
        gr = G - gl
        hr = H - hl
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = 0.5 * (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent)
        ok = distinct & (hl >= min_child_hessian) & (hr >= min_child_hessian) & np.isfinite(gain)
        if not ok.any():
            continue
        gain = np.where(ok, gain, -np.inf)
        top = gain.max()
        i = int(np.argmax(gain >= top - _tol(top)))
        if gain[i] > MIN_GAIN and (best is None or gain[i] > best.gain + _tol(best.gain)):
            best = SplitSpec(int(f), float(_midpoint(xs[i], xs[i + 1])), float(gain[i]))
    return best


def leaf_value(ids, g, h, reg_lambda, shrinkage):
    G = g[ids].sum()
    H = h[ids].sum()
    if H + reg_lambda <= 0:
        return 0.0
    return float(-shrinkage * G / (H + reg_lambda))


def partition(X, ids, split):
    go_left = X[ids, split.feature] <= split.threshold
    return ids[go_left], ids[~go_left]


def grow_tree(X, g, h, sample_ids, feature_subset, max_leaves, reg_lambda=1.0,
              min_child_hessian=1e-3, shrinkage=0.1) -> Node:
    """Best-first growth: always split the open leaf with the largest gain.

    Stops at ``max_leaves`` leaves or when no leaf has a positive-gain split.
    Leaf values are ``-shrinkage * G / (H + lambda)``. Gain ties between
    leaves go to the leaf created first.
    """
    ids = np.asarray(sample_ids, dtype=np.int64)
    root = Node.leaf()
    leaves = {id(root): (root, ids)}
    heap = []
    seq = itertools.count()

    def consider(node, idx):
        s = best_split(idx, g, h, X, feature_subset, reg_lambda, min_child_hessian)
        if s is not None:
            heapq.heappush(heap, (-s.gain, next(seq), node, idx, s))

    consider(root, ids)
    n_leaves = 1
    while heap and n_leaves < max_leaves:
        _, _, node, idx, s = heapq.heappop(heap)
        li, ri = partition(X, idx, s)
        left, right = Node.leaf(), Node.leaf()
        node.make_internal(s, left, right)
        del leaves[id(node)]
        leaves[id(left)] = (left, li)
        leaves[id(right)] = (right, ri)
        n_leaves += 1
        consider(left, li)
        consider(right, ri)

    for node, idx in leaves.values():
        node.value = leaf_value(idx, g, h, reg_lambda, shrinkage)
    return root


def feature_subset(seed, iteration, klass, n_features, fraction):
    """Features available to tree ``(iteration, klass)``; pure function of its arguments."""
    n = min(n_features, max(1, math.ceil(fraction * n_features)))
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, iteration, klass])
    return tuple(sorted(int(f) for f in rng.choice(n_features, size=n, replace=False)))


# --------------------------------------------------------------------------
# ensemble


@dataclass(eq=False)
class Ensemble:
    base_score: np.ndarray
    trees: list  # trees[m][k]
    config: TrainConfig
    n_classes: int
    n_features: int

    @property
    def n_iterations(self):
        return len(self.trees)

    def all_trees(self):
        for row in self.trees:
            yield from row

    def _matrix(self, X):
        if isinstance(X, Dataset):
            X = X.features
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"dimension mismatch: got {X.shape[1]} features, model has {self.n_features}")
        return X, single

    def predict_raw(self, X):
        X, single = self._matrix(X)
        out = np.tile(np.asarray(self.base_score, dtype=np.float64), (X.shape[0], 1))
        for row in self.trees:
            for t in row:
                out[:, t.klass] += predict_tree(t.root, X)
        return out[0] if single else out

    def staged_predict_raw(self, X):
        """Scores after each boosting iteration, starting with the base score."""
        X, _ = self._matrix(X)
        out = np.tile(np.asarray(self.base_score, dtype=np.float64), (X.shape[0], 1))
        yield out.copy()
        for row in self.trees:
            for t in row:
                out[:, t.klass] += predict_tree(t.root, X)
            yield out.copy()

    def predict_proba(self, X):
        return softmax(self.predict_raw(X))

    def predict(self, X):
        # np.argmax picks the first maximum, i.e. the lowest class index on ties
        return np.argmax(self.predict_raw(X), axis=-1)

    predict_label = predict

    def copy(self):
        return Ensemble(np.array(self.base_score, dtype=np.float64),
                        [[t.copy() for t in row] for row in self.trees],
                        self.config, self.n_classes, self.n_features)


def boosting_gradients(labels, scores):
    """Per-iteration g/h columns as contiguous arrays, one pair per class."""
    gh = grad_hess(labels, scores)
    K = scores.shape[1]
    return ([np.ascontiguousarray(gh.grad[:, k]) for k in range(K)],
            [np.ascontiguousarray(gh.hess[:, k]) for k in range(K)])


def train(dataset: Dataset, config: TrainConfig = TrainConfig()) -> Ensemble:
    """Fit ``config.iterations`` rounds of one tree per class.

    Gradients are taken once per round at the scores of the previous round,
    then all K trees of the round are grown and added.
    """
    X = dataset.features
    y = dataset.labels
    N, d = X.shape
    K = dataset.n_classes
    base = np.zeros(K)
    scores = np.tile(base, (N, 1))
    ids = np.arange(N, dtype=np.int64)
    trees = []
    for m in range(config.iterations):
        gs, hs = boosting_gradients(y, scores)
        row = []
        for k in range(K):
            feats = feature_subset(config.seed, m, k, d, config.feature_sampling)
            root = grow_tree(X, gs[k], hs[k], ids, feats, config.max_leaves, config.reg_lambda,
                             config.min_child_hessian, config.shrinkage)
            row.append(Tree(root, m, k, feats))
        for t in row:
            scores[:, t.klass] += predict_tree(t.root, X)
        trees.append(row)
    return Ensemble(base, trees, config, K, d)
