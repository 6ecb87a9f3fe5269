"""Watermark effectiveness, accuracy, robustness and candidate resilience.

Ratios whose denominator is empty come back as ``None`` rather than 0 or 1.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

COLUMNS = ("dataset", "scenario", "strategy", "selection", "ratio", "seed", "a_wm", "a_model",
           "a_model_adj", "robustness", "resilience", "resilience_adj")


def _labels(model, X):
    X = np.asarray(X, dtype=np.float64)
    return model.predict(X) if X.size else np.zeros(0, dtype=np.int64)


def effectiveness(model_wm, X_wm, y_wm) -> float:
    """Share of watermark rows that ``model_wm`` labels with their watermark label."""
    y_wm = np.asarray(y_wm)
    if y_wm.size == 0:
        raise ValueError("effectiveness of an empty watermark set")
    return float(np.mean(_labels(model_wm, X_wm) == y_wm))


def general_accuracy(model, X, y) -> float:
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("accuracy on an empty test set")
    return float(np.mean(_labels(model, X) == y))


def robustness(model_wm, model_after, X_wm, y_wm) -> Optional[float]:
    """Of the watermarks ``model_wm`` carries, the share ``model_after`` still carries."""
    y_wm = np.asarray(y_wm)
    if y_wm.size == 0:
        return None
    before = _labels(model_wm, X_wm) == y_wm
    if not before.any():
        return None
    after = _labels(model_after, X_wm) == y_wm
    return float(np.sum(before & after) / np.sum(before))


def candidate_resilience(model_init, model_wm, X_rest, y_true=None, literal=False
                         ) -> Optional[float]:
    """Share of non-selected candidates whose predicted label survives embedding.

    By default the reference is the initial model's prediction; ``literal=True``
    compares against ``y_true`` instead.
    """
    X_rest = np.asarray(X_rest, dtype=np.float64)
    if X_rest.shape[0] == 0:
        return None
    if literal:
        if y_true is None:
            raise ValueError("literal resilience needs y_true")
        ref = np.asarray(y_true)
    else:
        ref = _labels(model_init, X_rest)
    return float(np.mean(_labels(model_wm, X_rest) == ref))


def adjusted(value, a_wm):
    if value is None or a_wm is None:
        return None
    return float(value) * float(a_wm)


@dataclass
class MetricsReport:
    dataset: str
    scenario: str
    strategy: str
    selection: str
    ratio: float
    seed: int
    a_wm: Optional[float] = None
    a_model: Optional[float] = None
    a_model_adj: Optional[float] = None
    robustness: Optional[float] = None
    resilience: Optional[float] = None
    resilience_adj: Optional[float] = None
    # bookkeeping, not part of the stable column set
    k: int = 0
    n: int = 0
    shortfall: bool = False
    error: Optional[str] = None

    def row(self):
        return [getattr(self, c) for c in COLUMNS]

    def to_dict(self):
        return asdict(self)
