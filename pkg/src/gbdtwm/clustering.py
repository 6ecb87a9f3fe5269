"""k-means, silhouette scoring and nearest-neighbour queries (Euclidean)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

_CHUNK = 2048


@dataclass(eq=False)
class ClusterModel:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def n_clusters(self):
        return self.centroids.shape[0]


def sq_distances(A, B):
    """Squared Euclidean distances between rows of A and rows of B, clipped at 0."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    d = (A * A).sum(1)[:, None] - 2.0 * A @ B.T + (B * B).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _assign(X, C):
    best = np.empty(X.shape[0], dtype=np.int64)
    dist = np.empty(X.shape[0])
    for s in range(0, X.shape[0], _CHUNK):
        d = sq_distances(X[s:s + _CHUNK], C)
        best[s:s + _CHUNK] = np.argmin(d, axis=1)
        dist[s:s + _CHUNK] = d[np.arange(d.shape[0]), best[s:s + _CHUNK]]
    return best, dist


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    closest = sq_distances(X, X[centers[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with a centre; take unused indices in order
            used = set(centers)
            nxt = next(i for i in range(n) if i not in used)
        else:
            r = rng.random() * total
            nxt = int(np.searchsorted(np.cumsum(closest), r, side="right"))
            nxt = min(nxt, n - 1)
        centers.append(nxt)
        closest = np.minimum(closest, sq_distances(X, X[nxt][None, :])[:, 0])
    return X[centers].copy()


def _repair_empty(X, labels, dist, k):
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        # steal the worst-served point from a cluster that can spare one
        donors = counts[labels] > 1
        cand = np.where(donors, dist, -np.inf)
        i = int(np.argmax(cand))
        counts[labels[i]] -= 1
        labels[i] = j
        dist[i] = 0.0
        counts[j] = 1
    return labels


def kmeans(points, k, seed=0, max_iters=100) -> ClusterModel:
    """Lloyd's algorithm from a k-means++ start; deterministic for a given seed."""
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, k, rng)
    labels, dist = _assign(X, C)
    labels = _repair_empty(X, labels, dist, k)
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        C = np.zeros((k, X.shape[1]))
        np.add.at(C, labels, X)
        C /= np.bincount(labels, minlength=k)[:, None]
        history.append(float(((X - C[labels]) ** 2).sum()))
        new, dist = _assign(X, C)
        new = _repair_empty(X, new, dist, k)
        if np.array_equal(new, labels):
            break
        labels = new
    inertia = float(((X - C[labels]) ** 2).sum())
    return ClusterModel(C, labels, inertia, history, it)


def silhouette(points, assignments) -> float:
    """Mean silhouette width; singleton clusters and a == b == 0 contribute 0."""
    X = np.asarray(points, dtype=np.float64)
    lab = np.asarray(assignments, dtype=np.int64)
    uniq, lab = np.unique(lab, return_inverse=True)
    if uniq.size < 2:
        raise ValueError("silhouette needs at least two distinct clusters")
    k = uniq.size
    counts = np.bincount(lab, minlength=k).astype(np.float64)
    onehot = np.zeros((X.shape[0], k))
    onehot[np.arange(X.shape[0]), lab] = 1.0
    total = 0.0
    for s in range(0, X.shape[0], _CHUNK):
        D = cdist(X[s:s + _CHUNK], X)
        sums = D @ onehot
        own = lab[s:s + _CHUNK]
        rows = np.arange(own.size)
        own_n = counts[own]
        a = np.where(own_n > 1, sums[rows, own] / np.maximum(own_n - 1, 1), 0.0)
        mean_other = sums / counts[None, :]
        mean_other[rows, own] = np.inf
        b = mean_other.min(axis=1)
        denom = np.maximum(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            sil = np.where((own_n > 1) & (denom > 0), (b - a) / denom, 0.0)
        total += sil.sum()
    return float(total / X.shape[0])


def default_k_range(n):
    """Silhouette search range [2, min(10, floor(sqrt(n)))]; empty when n < 4."""
    return 2, min(10, math.isqrt(n))


def select_k(points, k_min, k_max, seed=0) -> int:
    """k in [k_min, k_max] with the highest silhouette; ties go to the smaller k."""
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if not 2 <= k_min <= k_max <= n - 1:
        raise ValueError(f"need 2 <= k_min <= k_max <= N-1, got [{k_min}, {k_max}] with N={n}")
    best_k, best_s = None, -np.inf
    for k in range(k_min, k_max + 1):
        model = kmeans(X, k, seed)
        if np.unique(model.assignments).size < 2:
            continue
        s = silhouette(X, model.assignments)
        if s > best_s:
            best_k, best_s = k, s
    return best_k if best_k is not None else k_min


def nearest_neighbors(query, points, l, exclude=()):
    """Indices of the ``l`` points closest to ``query``, skipping ``exclude``.

    Equal distances are ordered by index.
    """
    X = np.asarray(points, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    mask = np.ones(X.shape[0], dtype=bool)
    excl = np.fromiter((int(i) for i in exclude), dtype=np.int64)
    mask[excl] = False
    avail = np.flatnonzero(mask)
    if l > avail.size:
        raise ValueError(f"asked for {l} neighbours but only {avail.size} points are available")
    d = ((X[avail] - q) ** 2).sum(axis=1)
    order = np.lexsort((avail, d))
    return avail[order[:l]]
