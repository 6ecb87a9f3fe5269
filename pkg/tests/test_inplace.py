import numpy as np
import pytest

from gbdtwm.data import Dataset, concat
from gbdtwm.gbdt import TrainConfig, grad_hess, route, train
from gbdtwm.inplace import (RETRAIN, UNCHANGED, UpdateContext, finetune, inplace_update,
                            recheck_node)
from gbdtwm.model_io import dumps

from oracles import exhaustive_split


def structure(model):
    return [[(n.feature, n.threshold) for n in t.root.internal_nodes()] for t in model.all_trees()]


@pytest.fixture
def fitted(toy3):
    return train(toy3, TrainConfig(iterations=8, max_leaves=6, feature_sampling=1.0, seed=1))


def test_empty_fine_is_a_fixed_point(toy3, fitted):
    out, rep = inplace_update(fitted, UpdateContext(toy3, Dataset.empty(2, 3)))
    X = np.random.default_rng(0).normal(2, 4, size=(200, 2))
    assert np.max(np.abs(out.predict_raw(X) - fitted.predict_raw(X))) <= 1e-9
    assert rep.retrained == 0 and structure(out) == structure(fitted)
    assert dumps(finetune(fitted, Dataset.empty(2, 3), toy3)) == dumps(out)


def test_input_model_untouched(toy3, fitted):
    before = dumps(fitted)
    rng = np.random.default_rng(2)
    fine = Dataset(rng.normal(3, 3, size=(10, 2)), rng.integers(3, size=10), 3)
    inplace_update(fitted, UpdateContext(toy3, fine))
    assert dumps(fitted) == before


def test_duplicated_context_is_invariant_without_regularisation(toy3):
    cfg = TrainConfig(iterations=6, max_leaves=5, feature_sampling=1.0, reg_lambda=0.0,
                      min_child_hessian=0.0)
    m = train(toy3, cfg)
    out = finetune(m, toy3, toy3)
    X = np.random.default_rng(1).normal(2, 4, size=(100, 2))
    assert structure(out) == structure(m)
    assert np.max(np.abs(out.predict_raw(X) - m.predict_raw(X))) <= 1e-9


def test_structure_outside_retrained_subtrees_is_kept(toy3, fitted):
    rng = np.random.default_rng(4)
    fine = Dataset(rng.normal(3, 1, size=(40, 2)), rng.integers(3, size=40), 3)
    out, rep = inplace_update(fitted, UpdateContext(toy3, fine))
    assert rep.retrained > 0
    for t_old, t_new in zip(fitted.all_trees(), out.all_trees()):
        hit = [e.path for e in rep.events if (e.iteration, e.klass) == (t_old.iteration, t_old.klass)]
        # a node is only changed if it lies on or below a retrained path
        def walk(a, b, path):
            if any(path.startswith(p) for p in hit):
                return
            assert not a.is_leaf and not b.is_leaf or a.is_leaf == b.is_leaf
            if a.is_leaf:
                return
            assert (a.feature, a.threshold) == (b.feature, b.threshold)
            walk(a.left, b.left, path + "L")
            walk(a.right, b.right, path + "R")
        walk(t_old.root, t_new.root, "")
        assert t_new.root.n_leaves() <= fitted.config.max_leaves


def test_fine_only_mode_and_validation(toy3, fitted):
    fine = toy3.subset(np.arange(0, 90, 3))
    out, _ = inplace_update(fitted, UpdateContext(None, fine, "fine_only"))
    assert out.n_iterations == fitted.n_iterations
    with pytest.raises(ValueError):
        UpdateContext(None, fine, "union")
    with pytest.raises(ValueError):
        UpdateContext(None, Dataset.empty(2, 3), "fine_only")
    with pytest.raises(ValueError):
        inplace_update(fitted, UpdateContext(Dataset.empty(5, 3), Dataset.empty(5, 3)))


def root_best(ds, feats):
    g = grad_hess(ds.labels, np.zeros((len(ds), ds.n_classes))).grad
    h = grad_hess(ds.labels, np.zeros((len(ds), ds.n_classes))).hess
    return [exhaustive_split(list(range(len(ds))), g[:, k], h[:, k], ds.features, feats, 1.0, 1e-3)
            for k in range(ds.n_classes)]


def find_flip_instance():
    """Search small instances until one extra sample changes exactly one root split."""
    rng = np.random.default_rng(0)
    for _ in range(500):
        X = rng.integers(0, 4, size=(8, 4)).astype(float)
        y = rng.integers(2, size=8)
        ds = Dataset(X, y, 2)
        cfg = TrainConfig(iterations=1, max_leaves=2, feature_sampling=0.5, seed=int(rng.integers(99)))
        m = train(ds, cfg)
        subsets = [t.feature_subset for t in m.trees[0]]
        extra = Dataset(rng.integers(0, 4, size=(1, 4)).astype(float), rng.integers(2, size=1), 2)
        before = [root_best(ds, s)[k] for k, s in enumerate(subsets)]
        after = [root_best(concat([ds, extra]), s)[k] for k, s in enumerate(subsets)]
        flips = [b is not None and a is not None and b[0] != a[0] for b, a in zip(before, after)]
        same = [b is not None and a is not None and b[:2] == a[:2] for b, a in zip(before, after)]
        if sum(flips) == 1 and sum(same) == 1:
            return ds, extra, m, flips.index(True)
    raise AssertionError("no instance found")


def test_injected_sample_retrains_exactly_one_subtree():
    ds, extra, m, k = find_flip_instance()
    out, rep = inplace_update(m, UpdateContext(ds, extra))
    assert rep.retrained == 1
    (ev,) = rep.events
    assert (ev.iteration, ev.klass, ev.path) == (0, k, "")
    assert ev.new[0] != ev.old[0]


def test_recheck_node_cases(toy3, fitted):
    t = fitted.trees[0][0]
    g = grad_hess(toy3.labels, np.zeros((len(toy3), 3)))
    ids = np.arange(len(toy3))
    args = (g.grad[:, 0], g.hess[:, 0], toy3.features, t.feature_subset)
    assert recheck_node(t.root, ids, *args) == UNCHANGED
    assert recheck_node(t.root, [], *args) == UNCHANGED


def test_recheck_matches_exhaustive_oracle():
    rng = np.random.default_rng(9)
    from gbdtwm.gbdt import Node
    for _ in range(50):
        n = int(rng.integers(2, 15))
        X = rng.integers(0, 5, size=(n, 1)).astype(float)
        g, h = rng.normal(size=n), rng.uniform(0.1, 1, size=n)
        node = Node(0, float(rng.integers(0, 5)) + 0.5, 0.0, Node.leaf(), Node.leaf())
        want = exhaustive_split(list(range(n)), g, h, X, [0], 1.0, 1e-3)
        expect = UNCHANGED if want is not None and want[1] == node.threshold else RETRAIN
        assert recheck_node(node, np.arange(n), g, h, X, (0,)) == expect


def test_routing_covers_all_samples(toy3, fitted):
    for t in fitted.all_trees():
        ids = np.arange(len(toy3))
        leaf_ids = np.concatenate([i for n, i in route(t.root, toy3.features, ids) if n.is_leaf])
        assert sorted(leaf_ids.tolist()) == ids.tolist()
