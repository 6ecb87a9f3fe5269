"""Watermark candidates, watermark subset selection and embedding.

A strategy nominates ``n`` candidates from a candidate dataset; a selection
rule keeps ``k`` of them; each kept sample with bit 1 is relabelled to the
most confident class that is neither its true label nor the model's
prediction, and the model is fine-tuned in place on those relabelled rows.

All distances are Euclidean in z-scored feature space, with the scaling fit on
the candidate dataset.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .clustering import default_k_range, kmeans, nearest_neighbors, select_k
from .data import Dataset, StandardizationStats, standardize_apply, standardize_fit
from .gbdt import Ensemble
from .inplace import UpdateContext, inplace_update

STRATEGIES = ("wrong", "outlier", "cluster", "confidence", "random")
SELECTIONS = ("conf", "dist")
SCENARIOS = ("cand_eq_train", "cand_separate")


class InsufficientCandidates(ValueError):
    pass


def wm_label(raw_scores, y_true, y_pred) -> int:
    """Highest-scoring class other than ``y_true`` and ``y_pred`` (lowest index on ties)."""
    s = np.asarray(raw_scores, dtype=np.float64)
    eligible = [c for c in range(s.shape[0]) if c != y_true and c != y_pred]
    if not eligible:
        raise ValueError(f"no class left once {y_true} and {y_pred} are excluded (K={s.shape[0]})")
    return max(eligible, key=lambda c: (s[c], -c))


@dataclass(eq=False)
class Candidate:
    index: int  # row in the candidate dataset
    x: np.ndarray
    y_true: int
    y_pred: int
    conf_pred: float  # raw score of the predicted class
    conf_true: float  # raw score of the true class
    raw: np.ndarray
    role: str = "plain"  # "center" for Cluster Center Flip candidates


@dataclass(eq=False)
class CandidateSet:
    strategy: str
    candidates: list
    requested: int
    stats: StandardizationStats
    neighbors: dict = field(default_factory=dict)  # center index -> neighbour indices
    shortfall: bool = False

    def __len__(self):
        return len(self.candidates)

    def positions(self):
        return np.asarray([c.index for c in self.candidates], dtype=np.int64)


@dataclass(eq=False)
class WatermarkEntry:
    candidate: Candidate
    bit: int
    y_wm: int


@dataclass(eq=False)
class WatermarkSet:
    entries: list
    selection: str
    strategy: str
    seed: Optional[int] = None
    rest: list = field(default_factory=list)  # candidates that were not selected
    neighbors: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def flipped(self):
        return [e for e in self.entries if e.bit == 1]

    def watermark_arrays(self):
        """``(X, y_wm)`` of the bit-1 entries."""
        f = self.flipped()
        if not f:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        return (np.vstack([e.candidate.x for e in f]),
                np.asarray([e.y_wm for e in f], dtype=np.int64))

    def rest_arrays(self):
        if not self.rest:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return (np.vstack([c.x for c in self.rest]),
                np.asarray([c.y_true for c in self.rest], dtype=np.int64),
                np.asarray([c.y_pred for c in self.rest], dtype=np.int64))

    # -- key file ---------------------------------------------------------

    def to_dict(self):
        def cand(c):
            return {"index": c.index, "x": [float(v) for v in c.x], "y_true": c.y_true,
                    "y_pred": c.y_pred, "role": c.role}

        return {
            "format": "gbdtwm-key/1",
            "strategy": self.strategy,
            "selection": self.selection,
            "seed": self.seed,
            "entries": [dict(cand(e.candidate), bit=e.bit, y_wm=e.y_wm) for e in self.entries],
            "rest": [cand(c) for c in self.rest],
            "neighbors": {str(k): [int(i) for i in v] for k, v in self.neighbors.items()},
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "gbdtwm-key/1":
            raise ValueError(f"unsupported key format {d.get('format')!r}")

        def cand(e):
            return Candidate(int(e["index"]), np.asarray(e["x"], dtype=np.float64), int(e["y_true"]),
                             int(e["y_pred"]), float("nan"), float("nan"), np.zeros(0),
                             e.get("role", "plain"))

        entries = [WatermarkEntry(cand(e), int(e["bit"]), int(e["y_wm"])) for e in d["entries"]]
        return cls(entries, d["selection"], d["strategy"], d.get("seed"),
                   [cand(e) for e in d.get("rest", [])],
                   {int(k): list(v) for k, v in d.get("neighbors", {}).items()})

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# candidate strategies


class _Scored:
    """Initial-model view of a candidate dataset."""

    def __init__(self, model: Ensemble, cand: Dataset):
        self.data = cand
        self.raw = model.predict_raw(cand.features)
        self.pred = np.argmax(self.raw, axis=1)
        self.y = cand.labels
        self.stats = standardize_fit(cand)
        self.z = standardize_apply(self.stats, cand.features)
        self.correct = np.flatnonzero(self.pred == self.y)
        self.wrong = np.flatnonzero(self.pred != self.y)

    def candidate(self, i, role="plain"):
        i = int(i)
        r = self.raw[i]
        return Candidate(i, self.data.features[i].copy(), int(self.y[i]), int(self.pred[i]),
                         float(r[self.pred[i]]), float(r[self.y[i]]), r.copy(), role)

    def bottom(self, idx, values, n):
        # stable sort keeps ties in index order
        order = np.argsort(values[idx], kind="stable")
        return idx[order[:n]]


def _need_correct(sc, n, what):
    if sc.correct.size < n:
        raise InsufficientCandidates(
            f"{what}: need {n} correctly predicted samples, only {sc.correct.size} available")


def candidates_wrong(model, cand: Dataset, n) -> CandidateSet:
    """Misclassified samples with the lowest predicted-class score."""
    sc = _Scored(model, cand)
    conf = sc.raw[np.arange(len(cand)), sc.pred]
    chosen = sc.bottom(sc.wrong, conf, n)
    return CandidateSet("wrong", [sc.candidate(i) for i in chosen], n, sc.stats,
                        shortfall=chosen.size < n)


def candidates_outlier(model, cand: Dataset, n, seed=0) -> CandidateSet:
    """Correct samples farthest from their nearest k-means centroid.

    The cluster count is chosen by silhouette over ``[2, min(10, floor(sqrt(N)))]``;
    with fewer than 4 correct samples a single centroid is used.
    """
    sc = _Scored(model, cand)
    _need_correct(sc, n, "outlier")
    Z = sc.z[sc.correct]
    lo, hi = default_k_range(Z.shape[0])
    hi = min(hi, Z.shape[0] - 1)
    m = select_k(Z, lo, hi, seed) if lo <= hi else 1
    cm = kmeans(Z, m, seed)
    d = np.sqrt(((Z[:, None, :] - cm.centroids[None, :, :]) ** 2).sum(-1)).min(axis=1)
    order = np.lexsort((np.arange(d.size), -d))[:n]
    return CandidateSet("outlier", [sc.candidate(sc.correct[i]) for i in order], n, sc.stats)


def candidates_cluster_center(model, cand: Dataset, n, l=2, seed=0) -> CandidateSet:
    """One correct sample per k-means cluster (k = n), the member nearest its centroid.

    Each centre gets the ``l`` nearest correct samples that are not centres.
    """
    sc = _Scored(model, cand)
    _need_correct(sc, n, "cluster")
    if l < 1:
        raise ValueError("l must be >= 1")
    Z = sc.z[sc.correct]
    if Z.shape[0] - n < l:
        raise InsufficientCandidates(f"cluster: {Z.shape[0]} correct samples cannot host {n} "
                                     f"centres with {l} neighbours each")
    cm = kmeans(Z, n, seed)
    local = []
    for j in range(n):
        members = np.flatnonzero(cm.assignments == j)
        d = ((Z[members] - cm.centroids[j]) ** 2).sum(axis=1)
        local.append(int(members[np.lexsort((members, d))[0]]))
    centers = set(local)
    neighbors = {}
    for c in local:
        nb = nearest_neighbors(Z[c], Z, l, exclude=centers)
        neighbors[int(sc.correct[c])] = [int(sc.correct[i]) for i in nb]
    cands = [sc.candidate(sc.correct[c], role="center") for c in local]
    return CandidateSet("cluster", cands, n, sc.stats, neighbors=neighbors)


def candidates_confidence(model, cand: Dataset, n) -> CandidateSet:
    """Correct samples with the lowest true-class score."""
    sc = _Scored(model, cand)
    _need_correct(sc, n, "confidence")
    conf = sc.raw[np.arange(len(cand)), sc.y]
    chosen = sc.bottom(sc.correct, conf, n)
    return CandidateSet("confidence", [sc.candidate(i) for i in chosen], n, sc.stats)


def candidates_random(cand: Dataset, model, n, seed=0) -> CandidateSet:
    if n > len(cand):
        raise InsufficientCandidates(f"random: n={n} exceeds {len(cand)} samples")
    sc = _Scored(model, cand)
    chosen = np.random.default_rng(seed).choice(len(cand), size=n, replace=False)
    return CandidateSet("random", [sc.candidate(i) for i in chosen], n, sc.stats)


def candidates(strategy, model, cand: Dataset, n, seed=0, l=2) -> CandidateSet:
    if strategy == "wrong":
        return candidates_wrong(model, cand, n)
    if strategy == "outlier":
        return candidates_outlier(model, cand, n, seed)
    if strategy == "cluster":
        return candidates_cluster_center(model, cand, n, l, seed)
    if strategy == "confidence":
        return candidates_confidence(model, cand, n)
    if strategy == "random":
        return candidates_random(cand, model, n, seed)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


# --------------------------------------------------------------------------
# selection


def _build_wset(cands: CandidateSet, chosen, selection, seed):
    chosen = list(chosen)
    picked = set(chosen)
    entries = []
    for i in chosen:
        c = cands.candidates[i]
        entries.append(WatermarkEntry(c, 1, wm_label(c.raw, c.y_true, c.y_pred)))
    rest = [c for i, c in enumerate(cands.candidates) if i not in picked]
    nb = {c.index: cands.neighbors[c.index] for c in (cands.candidates[i] for i in chosen)
          if c.index in cands.neighbors}
    return WatermarkSet(entries, selection, cands.strategy, seed, rest, nb)


def _check_k(cands, k):
    if k < 0 or k > len(cands):
        raise ValueError(f"cannot select {k} watermarks from {len(cands)} candidates")


def select_lowest_confidence(cands: CandidateSet, k) -> WatermarkSet:
    """The ``k`` candidates with the smallest predicted-class score; every bit set to 1."""
    _check_k(cands, k)
    conf = np.asarray([c.conf_pred for c in cands.candidates])
    chosen = np.argsort(conf, kind="stable")[:k]
    return _build_wset(cands, chosen, "conf", None)


def farthest_point_order(points, k, start):
    """Greedy max-min selection from ``start``; ties go to the lower index."""
    P = np.asarray(points, dtype=np.float64)
    chosen = [int(start)]
    mind = np.sqrt(((P - P[start]) ** 2).sum(axis=1))
    taken = np.zeros(P.shape[0], dtype=bool)
    taken[start] = True
    for _ in range(1, k):
        cand = np.where(taken, -np.inf, mind)
        nxt = int(np.argmax(cand))
        chosen.append(nxt)
        taken[nxt] = True
        mind = np.minimum(mind, np.sqrt(((P - P[nxt]) ** 2).sum(axis=1)))
    return chosen


def select_max_distance(cands: CandidateSet, k, seed=0) -> WatermarkSet:
    """Farthest-point greedy from a seeded random first pick."""
    _check_k(cands, k)
    if k == 0:
        return _build_wset(cands, [], "dist", seed)
    Z = standardize_apply(cands.stats, np.vstack([c.x for c in cands.candidates]))
    start = int(np.random.default_rng(seed).integers(len(cands)))
    return _build_wset(cands, farthest_point_order(Z, k, start), "dist", seed)


def select(selection, cands: CandidateSet, k, seed=0) -> WatermarkSet:
    if selection == "conf":
        return select_lowest_confidence(cands, k)
    if selection == "dist":
        return select_max_distance(cands, k, seed)
    raise ValueError(f"unknown selection {selection!r}; expected one of {SELECTIONS}")


# --------------------------------------------------------------------------
# embedding


@dataclass(eq=False)
class EmbeddingPlan:
    fine_dataset: Dataset
    scenario: str
    dup_factor: int
    center_extra: int

    def __len__(self):
        return len(self.fine_dataset)


def build_embedding_plan(wset: WatermarkSet, scenario, dup_factor=5, neighbor_map=None,
                         cand: Optional[Dataset] = None, n_classes=None, n_features=None
                         ) -> EmbeddingPlan:
    """Rows to fine-tune on.

    Bit-1 entries contribute ``(x, y_wm)``; bit-0 entries contribute nothing.
    Cluster Center Flip centres appear twice and bring their neighbours (looked
    up in ``cand``) with true labels. In the ``cand_eq_train`` scenario the
    whole block is then repeated ``dup_factor`` times.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    neighbor_map = wset.neighbors if neighbor_map is None else neighbor_map
    flipped = wset.flipped()
    if n_features is None:
        n_features = cand.n_features if cand is not None else (
            flipped[0].candidate.x.shape[0] if flipped else 1)
    if n_classes is None:
        n_classes = cand.n_classes if cand is not None else (
            max(max(e.y_wm, e.candidate.y_true) for e in flipped) + 1 if flipped else 1)

    xs, ys = [], []
    extra = 0
    for e in flipped:
        copies = 1
        if e.candidate.role == "center":
            copies, extra = 2, 1
        xs.extend([e.candidate.x] * copies)
        ys.extend([e.y_wm] * copies)
    for e in flipped:
        for j in neighbor_map.get(e.candidate.index, ()):
            if cand is None:
                raise ValueError("neighbour rows need the candidate dataset")
            xs.append(cand.features[j])
            ys.append(int(cand.labels[j]))
    reps = dup_factor if scenario == "cand_eq_train" else 1
    if not xs:
        return EmbeddingPlan(Dataset.empty(n_features, n_classes), scenario, reps, extra)
    X = np.tile(np.vstack(xs), (reps, 1))
    y = np.tile(np.asarray(ys, dtype=np.int64), reps)
    return EmbeddingPlan(Dataset(X, y, n_classes), scenario, reps, extra)


def embed(model: Ensemble, plan: EmbeddingPlan, context: Dataset):
    """Watermarked copy of ``model`` plus the update report."""
    return inplace_update(model, UpdateContext(context, plan.fine_dataset, "union"))


def watermark_counts(ratio, n_train):
    """``(k, n)`` with ``k = ceil(ratio * |D_train|)`` and ``n = 2k``."""
    k = max(1, math.ceil(ratio * n_train - 1e-9))
    return k, 2 * k
