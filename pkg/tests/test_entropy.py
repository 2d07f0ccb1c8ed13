import numpy as np
import pytest
from hypothesis import given, strategies as st

from opusketch.entropy import magnitude_histogram, select_scale, sketch_entropy
from opusketch.rff import FeatureMap, FrequencyFactors
from opusketch.sketching import Sketch, sketch_multiscale


def test_examples():
    assert sketch_entropy(np.ones(100)) == 0.0
    B = 8
    mags = (np.arange(B * 5) // 5 + 0.5) / B
    assert sketch_entropy(mags, B) == pytest.approx(np.log(B))
    assert sketch_entropy(np.array([0.1, 0.2, 0.7, 0.9]), 2) == pytest.approx(np.log(2))


def test_last_bin_closed():
    counts = magnitude_histogram(np.array([1.0, 0.0, 0.9999]), 4)
    np.testing.assert_array_equal(counts, [1, 0, 0, 2])
    with pytest.raises(ValueError):
        magnitude_histogram(np.ones(3), 1)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=200), st.integers(2, 64))
def test_bounds_and_permutation_invariance(mags, B):
    z = np.array(mags) * np.exp(1j * np.arange(len(mags)))
    h = sketch_entropy(z, B)
    assert 0.0 <= h <= np.log(B) + 1e-12
    assert sketch_entropy(z[::-1], B) == pytest.approx(h, abs=1e-12)


def _sk(mags, scale):
    return Sketch(np.asarray(mags, dtype=complex), scale, 1)


def test_selection_examples():
    idx, rep = select_scale([_sk([0.5], 1.0)])
    assert idx == 0
    rng = np.random.default_rng(0)
    idx, rep = select_scale([_sk(np.ones(100), 0.1), _sk(rng.uniform(0, 1, 100), 1.0)])
    assert idx == 1 and rep.selected_scale == 1.0
    assert rep.counts.shape == (2, 32) and rep.bins == 32


def test_ties_go_to_smallest_scale():
    s = [_sk(np.linspace(0, 1, 64), sc) for sc in (3.0, 1.0, 2.0)]
    idx, _ = select_scale(s)
    assert s[idx].scale == 1.0
    with pytest.raises(ValueError):
        select_scale([])


def test_report_csv():
    idx, rep = select_scale([_sk(np.ones(4), 0.5), _sk([0.1, 0.4, 0.6, 0.9], 2.0)], 4)
    lines = rep.to_csv().strip().splitlines()
    assert lines[0] == "sigma,entropy,selected"
    assert lines[1].startswith("0.5,0.0,0") and lines[2].endswith(",1")


def test_entropy_vanishes_for_large_scale():
    X = np.random.default_rng(1).uniform(-1, 1, (300, 3))
    diam = np.linalg.norm(X.max(0) - X.min(0))
    fmap = FeatureMap.from_factors(FrequencyFactors.draw(2000, 3, 1))
    (z,) = sketch_multiscale(fmap, [1e3 * diam], X)
    assert sketch_entropy(z) < 0.1
