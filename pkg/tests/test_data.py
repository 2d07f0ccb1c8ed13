import json

import numpy as np
import pytest

from opusketch.data import (CsvFormatError, LabeledDataset, gen_gmm, lloyd, load_csv,
                            rand_cls_baseline, rand_data_baseline, save_csv, write_sidecar)
from opusketch.metrics import empirical_risk, nearest_centroid, rse


def test_gmm_shapes_and_determinism():
    a = gen_gmm(4, 3, 10, 500, 1)
    b = gen_gmm(4, 3, 10, 500, 1)
    assert a.points.shape == (500, 3) and a.labels.min() >= 0 and a.labels.max() < 4
    np.testing.assert_array_equal(a.points, b.points)
    lo, hi = a.box
    assert np.all(a.points >= lo) and np.all(a.points <= hi)
    assert a.meta["means"].shape == (4, 3)


def test_gmm_variance_ratio():
    ds = gen_gmm(50, 4, 10, 50_000, 2)
    within = (ds.points - ds.meta["means"][ds.labels]).var()
    between = ds.meta["means"].var()
    assert within == pytest.approx(1.0, rel=0.05)
    assert between == pytest.approx(10.0, rel=0.3)


def test_gmm_l2_ball():
    ds = gen_gmm(3, 5, 10, 1000, 3, normalize="l2-ball")
    assert np.linalg.norm(ds.points, axis=1).max() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        gen_gmm(3, 5, normalize="unit-cube")
    with pytest.raises(ValueError):
        gen_gmm(0, 5)


def test_dataset_invariants():
    with pytest.raises(ValueError):
        LabeledDataset(np.empty((0, 2)))
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 2)), [0, 1])


def test_lloyd_monotone_and_consistent():
    ds = gen_gmm(5, 4, 10, 3000, 4)
    trace = []
    C, labels = lloyd(ds, 5, rng=0, restarts=1, trace=trace)
    assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))
    np.testing.assert_array_equal(labels, nearest_centroid(ds.points, C)[0])
    assert rse(ds, C, C) == 1.0
    assert empirical_risk(ds, C) == pytest.approx(trace[-1])


def test_lloyd_restarts_pick_best():
    ds = gen_gmm(6, 2, 3, 2000, 5)
    C1, _ = lloyd(ds, 6, rng=1, restarts=1)
    C5, _ = lloyd(ds, 6, rng=1, restarts=5)
    assert empirical_risk(ds, C5) <= empirical_risk(ds, C1) + 1e-9


def test_lloyd_empty_cluster_reseeded():
    X = np.array([[0.0], [0.1], [10.0], [10.1], [5.0]])
    C, labels = lloyd(X, 4, rng=0, restarts=3)
    assert len(np.unique(labels)) == 4
    with pytest.raises(ValueError):
        lloyd(X, 6)


def test_baselines():
    ds = gen_gmm(3, 2, 10, 300, 6)
    C = rand_data_baseline(ds, 3, 0)
    assert all(any(np.array_equal(c, x) for x in ds.points) for c in C)
    C = rand_cls_baseline(ds, ds.labels, 3, 0)
    for k, c in enumerate(C):
        assert any(np.array_equal(c, x) for x in ds.points[ds.labels == k])
    with pytest.raises(ValueError):
        rand_cls_baseline(ds, np.zeros(300, int), 2)


def test_csv_roundtrip(tmp_path):
    X = np.random.default_rng(0).standard_normal((5, 3))
    save_csv(tmp_path / "a.csv", X, labels=[0, 1, 2, 0, 1], header=["x", "y", "z", "label"])
    ds = load_csv(tmp_path / "a.csv", labels=True)
    np.testing.assert_array_equal(ds.points, X)
    np.testing.assert_array_equal(ds.labels, [0, 1, 2, 0, 1])
    save_csv(tmp_path / "b.csv", X, extra=np.ones(5))
    assert load_csv(tmp_path / "b.csv").points.shape == (5, 4)


@pytest.mark.parametrize("text,msg", [
    ("1,2\n3,x\n", ":2:"),
    ("1,2\n3,4,5\n", ":2:"),
    ("a,b\n", "no data"),
    ("1,2.5\n", "not an integer"),
    ("3\n", "no coordinates"),
])
def test_csv_errors(tmp_path, text, msg):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(CsvFormatError, match=msg):
        load_csv(p, labels=msg in ("not an integer", "no coordinates"))


def test_csv_blank_lines_and_header(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("x,y\n1,2\n\n3,4\n")
    np.testing.assert_array_equal(load_csv(p).points, [[1, 2], [3, 4]])


def test_sidecar(tmp_path):
    side = write_sidecar(tmp_path / "d.csv", {"a": 1, "arr": np.zeros(2)})
    write_sidecar(tmp_path / "d.csv", {"b": 2})
    lines = side.read_text().splitlines()
    assert side.name == "d.csv.jsonl" and json.loads(lines[0]) == {"a": 1} and len(lines) == 2
