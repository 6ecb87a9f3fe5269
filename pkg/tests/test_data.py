import gzip

import numpy as np
import pytest

from gbdtwm.data import (DataError, Dataset, concat, load_csv, split, split_indices,
                         standardize_apply, standardize_fit, standardize_invert)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_string_labels_remap_by_first_occurrence(tmp_path):
    ds = load_csv(write(tmp_path, "x,y,c\n1,2,a\n3,4,b\n5,6,a\n"))
    assert ds.labels.tolist() == [0, 1, 0]
    assert ds.n_classes == 2
    assert ds.label_names == ("a", "b")


def test_integer_labels_sorted_remap(tmp_path):
    ds = load_csv(write(tmp_path, "x,c\n1,7\n2,3\n3,7\n"))
    assert ds.labels.tolist() == [1, 0, 1]


def test_class_count_keeps_codes(tmp_path):
    ds = load_csv(write(tmp_path, "x,c\n1,2\n2,0\n"), class_count=4)
    assert ds.labels.tolist() == [2, 0] and ds.n_classes == 4
    with pytest.raises(DataError):
        load_csv(write(tmp_path, "x,c\n1,5\n", "e.csv"), class_count=4)


def test_label_column_by_name_and_gzip(tmp_path):
    p = tmp_path / "d.csv.gz"
    with gzip.open(p, "wt") as fh:
        fh.write("c,x,y\nb,1,2\na,3,4\n")
    ds = load_csv(p, label_column="c")
    assert ds.features.tolist() == [[1, 2], [3, 4]]
    assert ds.labels.tolist() == [0, 1]


@pytest.mark.parametrize("text", ["x,c\n1,a\nnan,b\n", "x,c\ninf,a\n", "x,c\nfoo,a\n", "x,c\n1,a\n2\n"])
def test_bad_cells(tmp_path, text):
    with pytest.raises(DataError):
        load_csv(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "nope.csv")


def test_dataset_is_read_only():
    ds = Dataset(np.zeros((2, 1)), [0, 1], 2)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), [0, 2], 2)


def test_empty_and_concat():
    e = Dataset.empty(3, 2)
    a = Dataset(np.ones((2, 3)), [0, 1], 2)
    c = concat([a, e, a])
    assert len(e) == 0 and len(c) == 4


def test_split_sizes_and_determinism():
    ds = Dataset(np.arange(10.0)[:, None], np.zeros(10, dtype=int), 1)
    a, b = split(ds, 0.8, 3)
    assert (len(a), len(b)) == (8, 2)
    both = sorted(a.features[:, 0].tolist() + b.features[:, 0].tolist())
    assert both == list(range(10))
    a2, _ = split(ds, 0.8, 3)
    assert np.array_equal(a.features, a2.features)


def test_split_ceiling_on_first_side():
    # brute-force count: ceil(0.8 * 3497)
    a, b = split_indices(3497, 0.8, 0)
    assert (len(a), len(b)) == (2798, 699)
    assert len(set(a) | set(b)) == 3497


def test_split_rejects_empty_side():
    with pytest.raises(DataError):
        split_indices(1, 0.8, 0)


def test_standardize_examples():
    s = standardize_fit(np.array([[0.0], [2.0]]))
    assert s.mean.tolist() == [1.0] and s.std.tolist() == [1.0]
    assert standardize_apply(s, np.array([2.0])).tolist() == [1.0]
    s1 = standardize_fit(np.array([[3.0, 4.0]]))
    assert s1.mean.tolist() == [3.0, 4.0] and s1.std.tolist() == [0.0, 0.0]
    assert np.all(standardize_apply(s1, np.array([3.0, 4.0])) == 0)


def test_standardize_two_pass_oracle_and_round_trip():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 3)) * 4 + 1
    s = standardize_fit(X)
    for j in range(3):
        col = X[:, j].tolist()
        mu = sum(col) / 5
        var = sum((v - mu) ** 2 for v in col) / 5
        assert abs(s.mean[j] - mu) < 1e-12 and abs(s.std[j] - var ** 0.5) < 1e-12
    x = rng.normal(size=3)
    assert np.allclose(standardize_invert(s, standardize_apply(s, x)), x, atol=1e-12, rtol=0)
    assert np.allclose(standardize_apply(s, s.mean), 0)


def test_bundled_datasets_shapes():
    from gbdtwm.harness import DatasetSpec, load_dataset
    tr, te = load_dataset(DatasetSpec.builtin("optdigits"))
    assert (len(tr), len(te), tr.n_features, tr.n_classes) == (3823, 1797, 64, 10)
    pen, _ = load_dataset(DatasetSpec.builtin("pendigits"))
    assert (len(pen), pen.n_features, pen.n_classes) == (10992, 16, 10)
    wine, _ = load_dataset(DatasetSpec.builtin("winequality"))
    assert (len(wine), wine.n_features, wine.n_classes) == (1599, 11, 6)
