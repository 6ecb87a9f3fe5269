import numpy as np
import pytest

from gbdtwm.data import Dataset
from gbdtwm.gbdt import TrainConfig, grad_hess, train
from gbdtwm.watermark import (InsufficientCandidates, WatermarkEntry, WatermarkSet,
                              build_embedding_plan, candidates, candidates_cluster_center,
                              candidates_confidence, candidates_outlier, candidates_random,
                              candidates_wrong, embed, farthest_point_order, select,
                              select_lowest_confidence, select_max_distance, watermark_counts,
                              wm_label)

from conftest import StubModel, blobs
from oracles import best_dispersion, min_pairwise


def onehot_raw(labels, K, scale=1.0):
    raw = np.zeros((len(labels), K))
    raw[np.arange(len(labels)), labels] = scale
    return raw


def test_wm_label_examples():
    assert wm_label([2.0, 1.0, 0.5], 0, 0) == 1
    assert wm_label([2.0, 1.5, 1.0], 0, 1) == 2
    with pytest.raises(ValueError):
        wm_label([1.0, 0.0], 0, 1)
    assert wm_label([0.0, 1.0, 1.0, 0.0], 0, 0) == 1


def test_wrong_candidates():
    ds = Dataset(np.arange(5.0)[:, None], [0, 0, 1, 1, 2], 3)
    perfect = StubModel(onehot_raw([0, 0, 1, 1, 2], 3))
    cs = candidates_wrong(perfect, ds, 2)
    assert len(cs) == 0 and cs.shortfall
    # rows 1, 2, 4 are wrong with predicted-class scores 0.9, 0.2, 0.5
    raw = np.array([[1, 0, 0], [0, 0.9, 0], [0.2, 0, 0], [0, 1, 0], [0.5, 0, 0]], dtype=float)
    cs = candidates_wrong(StubModel(raw), ds, 2)
    assert [c.index for c in cs.candidates] == [2, 4] and not cs.shortfall


def _outlier_instance(centers, extra):
    X, _ = blobs(centers, 30, 0.1, 1)
    X = np.vstack([X, [extra]])
    y = np.zeros(len(X), dtype=int)
    return Dataset(X, y, 2), StubModel(onehot_raw(y, 2))


def test_outlier_picks_extreme_point():
    # three clear blobs fix the silhouette choice; the appended point sits 30 sigma off one of them
    ds, model = _outlier_instance([(0, 0), (10, 0), (0, 10)], (3.0, 3.0))
    assert [c.index for c in candidates_outlier(model, ds, 1, seed=0).candidates] == [90]
    assert candidates_outlier(model, ds, 3, seed=0).candidates[0].index == 90


def test_isolated_point_gets_its_own_cluster():
    # with one blob, every k >= 2 spends a centroid on the far point, so it is not ranked first
    ds, model = _outlier_instance([(0, 0)], (5.0, 5.0))
    assert candidates_outlier(model, ds, 1, seed=0).candidates[0].index != 30


def test_outlier_tie_goes_to_lower_index():
    ds = Dataset(np.array([[-1.0], [1.0]]), [0, 0], 2)
    cs = candidates_outlier(StubModel(onehot_raw([0, 0], 2)), ds, 2)
    assert [c.index for c in cs.candidates] == [0, 1]


def test_cluster_center_examples():
    sq = Dataset(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]), [0] * 4, 2)
    cs = candidates_cluster_center(StubModel(onehot_raw([0] * 4, 2)), sq, 1, l=2)
    assert [c.index for c in cs.candidates] == [0]
    assert cs.candidates[0].role == "center" and len(cs.neighbors[0]) == 2

    pairs = Dataset(np.array([[0.0, 0.0], [0.0, 0.1], [9.0, 9.0], [9.0, 9.1]]), [0] * 4, 2)
    cs = candidates_cluster_center(StubModel(onehot_raw([0] * 4, 2)), pairs, 2, l=1)
    mate = {0: 1, 1: 0, 2: 3, 3: 2}
    for c in cs.candidates:
        assert cs.neighbors[c.index] == [mate[c.index]]
    with pytest.raises(InsufficientCandidates):
        candidates_cluster_center(StubModel(onehot_raw([0] * 4, 2)), pairs, 3, l=2)


def test_confidence_bottom_n():
    y = [0, 1, 0, 1, 0]
    raw = onehot_raw(y, 2) * np.array([[3.0], [1.0], [2.0], [5.0], [4.0]])
    ds = Dataset(np.arange(5.0)[:, None], y, 2)
    cs = candidates_confidence(StubModel(raw), ds, 3)
    assert [c.index for c in cs.candidates] == [1, 2, 0]
    assert len(candidates_confidence(StubModel(raw), ds, 5)) == 5
    with pytest.raises(InsufficientCandidates):
        candidates_confidence(StubModel(raw), ds, 6)


def test_random_candidates():
    ds = Dataset(np.arange(5.0)[:, None], [0] * 5, 2)
    model = StubModel(onehot_raw([0] * 5, 2))
    assert sorted(c.index for c in candidates_random(ds, model, 5, 3).candidates) == list(range(5))
    a = [c.index for c in candidates_random(ds, model, 2, 9).candidates]
    assert a == [c.index for c in candidates_random(ds, model, 2, 9).candidates]
    counts = np.zeros(5)
    for s in range(10_000):
        counts[candidates_random(ds, model, 1, s).candidates[0].index] += 1
    assert np.all(np.abs(counts / 10_000 - 0.2) <= 0.05)


def test_lowest_confidence_selection():
    y = [0] * 6
    raw = onehot_raw(y, 3) * np.arange(6, 0, -1)[:, None]
    ds = Dataset(np.arange(6.0)[:, None], y, 3)
    cs = candidates_confidence(StubModel(raw), ds, 6)
    ws = select_lowest_confidence(cs, 2)
    assert sorted(e.candidate.index for e in ws.entries) == [4, 5]
    assert all(e.bit == 1 and e.y_wm != 0 for e in ws.entries)
    assert len(select_lowest_confidence(cs, 6)) == 6 and len(ws.rest) == 4


def test_farthest_point_examples():
    P = np.array([[0.0], [1.0], [2.0], [10.0]])
    assert farthest_point_order(P, 2, 0) == [0, 3]
    ds = Dataset(P, [0] * 4, 2)
    cs = candidates_confidence(StubModel(onehot_raw([0] * 4, 2)), ds, 4)
    start = int(np.random.default_rng(5).integers(4))
    ws = select_max_distance(cs, 1, seed=5)
    assert [e.candidate.index for e in ws.entries] == [cs.candidates[start].index]


def test_farthest_point_half_of_optimum():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(3, 9))
        k = int(rng.integers(2, min(4, n) + 1))
        P = rng.normal(size=(n, 2))
        got = farthest_point_order(P, k, int(rng.integers(n)))
        assert min_pairwise(P, got) >= 0.5 * best_dispersion(P, k) - 1e-12


def entry(x, y_true, y_pred, y_wm, role="plain", bit=1, index=0):
    from gbdtwm.watermark import Candidate
    c = Candidate(index, np.asarray(x, dtype=float), y_true, y_pred, 0.0, 0.0, np.zeros(3), role)
    return WatermarkEntry(c, bit, y_wm)


def test_embedding_plan_counts():
    ws0 = WatermarkSet([entry([0.0], 0, 0, 1, bit=0)], "conf", "confidence")
    assert len(build_embedding_plan(ws0, "cand_eq_train", n_classes=3, n_features=1)) == 0
    ws = WatermarkSet([entry([0.0], 0, 0, 1), entry([1.0], 1, 1, 2, index=1)], "conf", "confidence")
    plan = build_embedding_plan(ws, "cand_eq_train", 5, n_classes=3)
    assert len(plan) == 10 and sorted(set(plan.fine_dataset.labels.tolist())) == [1, 2]
    cand = Dataset(np.arange(8.0)[:, None], [0, 0, 0, 1, 1, 1, 2, 2], 3)
    wc = WatermarkSet([entry([0.0], 0, 0, 1, "center", index=0), entry([3.0], 1, 1, 2, "center", index=3)],
                      "conf", "cluster", neighbors={0: [1, 2], 3: [4, 5]})
    plan = build_embedding_plan(wc, "cand_separate", 5, cand=cand)
    assert len(plan) == 8
    assert plan.fine_dataset.labels.tolist() == [1, 1, 2, 2, 0, 0, 1, 1]
    assert len(build_embedding_plan(wc, "cand_eq_train", 5, cand=cand)) == 40


def test_embed_empty_plan_is_identity(toy3):
    m = train(toy3, TrainConfig(iterations=5, feature_sampling=1.0))
    ws = WatermarkSet([], "conf", "confidence")
    plan = build_embedding_plan(ws, "cand_eq_train", n_classes=3, n_features=2)
    out, rep = embed(m, plan, toy3)
    assert np.array_equal(out.predict_raw(toy3.features), m.predict_raw(toy3.features))
    assert rep.retrained == 0


def test_embed_end_to_end(toy3):
    m = train(toy3, TrainConfig(iterations=20, feature_sampling=1.0))
    cs = candidates("confidence", m, toy3, 6)
    ws = select("conf", cs, 3)
    out, _ = embed(m, build_embedding_plan(ws, "cand_eq_train", 5, cand=toy3), toy3)
    X, y = ws.watermark_arrays()
    assert np.all(m.predict(X) != y)
    assert np.mean(out.predict(X) == y) >= 2 / 3


def test_key_round_trip(tmp_path, toy3):
    m = train(toy3, TrainConfig(iterations=3, feature_sampling=1.0))
    ws = select("dist", candidates("cluster", m, toy3, 4, seed=1), 2, seed=1)
    ws.save(tmp_path / "k.json")
    back = WatermarkSet.load(tmp_path / "k.json")
    X, y = ws.watermark_arrays()
    X2, y2 = back.watermark_arrays()
    assert np.array_equal(X, X2) and np.array_equal(y, y2)
    assert back.neighbors == ws.neighbors and len(back.rest) == 2


def test_gradient_identity_for_duplicated_sample():
    rng = np.random.default_rng(0)
    for r in (1, 2, 5):
        s = rng.normal(size=4)
        y, y_wm = 0, 2
        labels = [y] + [y_wm] * r
        g = grad_hess(labels, np.tile(s, (1 + r, 1))).grad.sum(0)
        p = grad_hess([0], s[None, :]).proba[0]
        assert abs(g[y] - (-1 + (1 + r) * p[y])) < 1e-12
        assert abs(g[y_wm] - (-r + (1 + r) * p[y_wm])) < 1e-12


def test_watermark_counts():
    assert watermark_counts(0.01, 1280) == (13, 26)
    assert watermark_counts(0.001, 100) == (1, 2)
    assert watermark_counts(0.1, 1000) == (100, 200)
