"""JSON model files (``gbdtwm/1``).

Floats are written with ``repr``, which round-trips exactly, so a loaded
model predicts bit-identically and re-saving reproduces the same bytes.

Layout::

    {"format": "gbdtwm/1",
     "n_features": d, "n_classes": K,
     "config": {...TrainConfig...},
     "base_score": [K floats],
     "trees": [{"iteration": m, "class": k, "features": [...], "root": NODE}, ...]}

    NODE := {"leaf": value}
          | {"feature": j, "threshold": t, "gain": g, "left": NODE, "right": NODE}

Trees are listed in training order (iteration-major, then class).
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .data import StandardizationStats
from .gbdt import Ensemble, Node, TrainConfig, Tree

FORMAT = "gbdtwm/1"


class ModelFormatError(ValueError):
    pass


def _node_to_dict(node: Node):
    if node.is_leaf:
        return {"leaf": float(node.value)}
    return {"feature": int(node.feature), "threshold": float(node.threshold),
            "gain": float(node.gain), "left": _node_to_dict(node.left),
            "right": _node_to_dict(node.right)}


def _num(v, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ModelFormatError(f"{what}: expected a finite number, got {v!r}")
    return float(v)


def _node_from_dict(d, features, n_features, where):
    if not isinstance(d, dict):
        raise ModelFormatError(f"{where}: node must be an object")
    if "leaf" in d:
        return Node.leaf(_num(d["leaf"], where + ".leaf"))
    try:
        f = d["feature"]
        left, right = d["left"], d["right"]
    except KeyError as e:
        raise ModelFormatError(f"{where}: malformed node, missing {e}") from None
    if not isinstance(f, int) or not 0 <= f < n_features:
        raise ModelFormatError(f"{where}: feature index {f!r} out of range")
    if f not in features:
        raise ModelFormatError(f"{where}: feature {f} is not in the tree's feature subset")
    return Node(f, _num(d["threshold"], where + ".threshold"), _num(d.get("gain", 0.0), where),
                _node_from_dict(left, features, n_features, where + "L"),
                _node_from_dict(right, features, n_features, where + "R"))


def model_to_dict(model: Ensemble):
    return {
        "format": FORMAT,
        "n_features": int(model.n_features),
        "n_classes": int(model.n_classes),
        "config": model.config.to_dict(),
        "base_score": [float(v) for v in model.base_score],
        "trees": [{"iteration": t.iteration, "class": t.klass,
                   "features": [int(f) for f in t.feature_subset],
                   "root": _node_to_dict(t.root)} for t in model.all_trees()],
    }


def model_from_dict(d) -> Ensemble:
    if not isinstance(d, dict):
        raise ModelFormatError("model file must hold a JSON object")
    if d.get("format") != FORMAT:
        raise ModelFormatError(f"unsupported format {d.get('format')!r}, expected {FORMAT!r}")
    try:
        d_feat, K = int(d["n_features"]), int(d["n_classes"])
        cfg = TrainConfig.from_dict(d["config"])
        base = np.asarray([_num(v, "base_score") for v in d["base_score"]])
        raw_trees = d["trees"]
    except (KeyError, TypeError) as e:
        raise ModelFormatError(f"malformed model header: {e}") from None
    except ValueError as e:
        raise ModelFormatError(str(e)) from None
    if base.shape != (K,):
        raise ModelFormatError(f"base_score has {base.size} entries, expected {K}")
    if len(raw_trees) % max(K, 1):
        raise ModelFormatError(f"{len(raw_trees)} trees do not fill whole rounds of {K} classes")
    M = len(raw_trees) // K
    rows = [[None] * K for _ in range(M)]
    for i, t in enumerate(raw_trees):
        m, k = t.get("iteration"), t.get("class")
        if not (isinstance(m, int) and isinstance(k, int) and 0 <= m < M and 0 <= k < K):
            raise ModelFormatError(f"tree {i}: bad position ({m}, {k})")
        if rows[m][k] is not None:
            raise ModelFormatError(f"tree {i}: duplicate position ({m}, {k})")
        feats = tuple(int(f) for f in t.get("features", ()))
        if list(feats) != sorted(set(feats)) or any(not 0 <= f < d_feat for f in feats):
            raise ModelFormatError(f"tree {i}: feature subset must be sorted, unique and in range")
        rows[m][k] = Tree(_node_from_dict(t.get("root"), set(feats), d_feat, f"tree[{i}]"),
                          m, k, feats)
    return Ensemble(base, rows, cfg, K, d_feat)


def dumps(model: Ensemble) -> str:
    return json.dumps(model_to_dict(model), indent=1) + "\n"


def loads(text: str) -> Ensemble:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"not valid JSON: {e}") from None
    return model_from_dict(d)


def save_model(model: Ensemble, path):
    Path(path).write_text(dumps(model))


def load_model(path) -> Ensemble:
    return loads(Path(path).read_text())


def save_stats(stats: StandardizationStats, path):
    Path(path).write_text(json.dumps(stats.to_dict(), indent=1) + "\n")


def load_stats(path) -> StandardizationStats:
    return StandardizationStats.from_dict(json.loads(Path(path).read_text()))
