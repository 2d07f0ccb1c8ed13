import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from opusketch.rff import (FeatureMap, FrequencyFactors, InvalidScaleError, NoDerivativeError,
                           build_frequency_matrix, rff_evaluate, rff_gradient, sample_directions,
                           sample_radii)

from conftest import central_diff


def test_directions_unit_rows():
    U = sample_directions(3, 5, 0)
    assert U.shape == (3, 5)
    np.testing.assert_allclose(np.linalg.norm(U, axis=1), 1.0, atol=1e-12)


def test_directions_one_dimensional_are_signs():
    for seed in range(5):
        assert abs(sample_directions(1, 1, seed)[0, 0]) == 1.0


def test_directions_angles_uniform_chi_square():
    U = sample_directions(10_000, 2, 7)
    angles = np.arctan2(U[:, 1], U[:, 0])
    counts, _ = np.histogram(angles, bins=16, range=(-np.pi, np.pi))
    assert stats.chisquare(counts).pvalue > 0.01


def test_directions_zero_norm_redraw():
    class Stub:
        def __init__(self):
            self.calls = 0

        def standard_normal(self, shape):
            self.calls += 1
            out = np.ones(shape)
            if self.calls == 1:
                out[0] = 0.0
            return out

    stub = Stub()
    import opusketch.rff as rff
    orig = rff.as_generator
    rff.as_generator = lambda r: r
    try:
        U = sample_directions(2, 3, stub)
    finally:
        rff.as_generator = orig
    assert stub.calls == 2
    np.testing.assert_allclose(np.linalg.norm(U, axis=1), 1.0)


def test_radii_nonnegative():
    r = sample_radii(4, 0)
    assert r.shape == (4,) and np.all(r >= 0)


def test_radii_folded_normal_moments():
    r = sample_radii(1_000_000, 3)
    assert abs(r.mean() - np.sqrt(2 / np.pi)) < 0.01
    assert abs(r.var() - (1 - 2 / np.pi)) < 0.01


def test_frequency_matrix_examples():
    f = FrequencyFactors(np.ones(3), np.eye(3), 1.0)
    np.testing.assert_array_equal(build_frequency_matrix(f), np.eye(3))
    f = FrequencyFactors.draw(6, 4, 1, scale=0.5)
    np.testing.assert_allclose(build_frequency_matrix(f, 0.25), 2 * build_frequency_matrix(f))
    f = FrequencyFactors([2.0, 3.0], np.eye(2), 2.0)
    np.testing.assert_allclose(build_frequency_matrix(f), [[1.0, 0.0], [0.0, 1.5]])


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_invalid_scale(bad):
    f = FrequencyFactors.draw(2, 2, 0)
    with pytest.raises(InvalidScaleError):
        build_frequency_matrix(f, bad)
    with pytest.raises(InvalidScaleError):
        FrequencyFactors(f.radii, f.directions, bad)
    with pytest.raises(InvalidScaleError):
        FeatureMap.from_factors(f, bad)


def test_factor_invariants_rejected():
    with pytest.raises(ValueError):
        FrequencyFactors([1.0], [[1.0, 1.0]])
    with pytest.raises(ValueError):
        FrequencyFactors([-1.0], [[1.0]])


def test_factors_are_read_only():
    f = FrequencyFactors.draw(3, 2, 0)
    with pytest.raises(ValueError):
        f.radii[0] = 1.0


def test_evaluate_examples():
    np.testing.assert_array_equal(rff_evaluate(np.ones((4, 3)), np.zeros(3)), np.ones(4))
    np.testing.assert_allclose(rff_evaluate([[np.pi]], [1.0]), [-1.0], atol=1e-15)
    W = np.random.default_rng(0).standard_normal((50, 4))
    np.testing.assert_allclose(np.abs(rff_evaluate(W, np.arange(4.0))), 1.0, atol=1e-12)
    np.testing.assert_allclose(rff_evaluate(lambda x: x @ W.T, np.arange(4.0)),
                               rff_evaluate(W, np.arange(4.0)))


def test_gradient_zero_residual():
    W = np.random.default_rng(1).standard_normal((5, 3))
    np.testing.assert_array_equal(rff_gradient(W, np.ones(3), np.zeros(5)), np.zeros(3))


def test_gradient_one_dimensional_closed_form():
    # <a, b> = sum a conj(b): Re<exp(-ic), i> = -sin(c), derivative -cos(c)
    W, v = np.array([[1.0]]), np.array([1j])
    f = lambda c: float(np.real(np.sum(rff_evaluate(W, c) * np.conj(v))))
    for c in (0.0, 0.3, -1.2):
        assert f(np.array([c])) == pytest.approx(-np.sin(c), abs=1e-15)
        assert rff_gradient(W, np.array([c]), v)[0] == pytest.approx(-np.cos(c), abs=1e-15)


def test_gradient_finite_differences_100_instances():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        M, D = rng.integers(1, 40), rng.integers(1, 8)
        W = rng.standard_normal((M, D))
        c = rng.standard_normal(D)
        v = rng.standard_normal(M) + 1j * rng.standard_normal(M)
        f = lambda x: float(np.real(np.sum(np.exp(-1j * (W @ x)) * np.conj(v))))
        g = rff_gradient(W, c, v)
        fd = central_diff(f, c)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-8))
    assert worst <= 1e-5


def test_gradient_needs_matrix():
    with pytest.raises(NoDerivativeError):
        rff_gradient(lambda x: x, np.zeros(1), np.zeros(1))
    fmap = FeatureMap(3, 2, project_fn=lambda X: np.zeros((len(X), 3)), provenance="device")
    assert not fmap.has_derivative
    with pytest.raises(NoDerivativeError):
        fmap.gradient(np.zeros(2), np.zeros(3))


def test_feature_map_gradient_matches_function():
    f = FrequencyFactors.draw(30, 3, 5)
    fmap = FeatureMap.from_factors(f, 0.7)
    c = np.array([0.1, -0.2, 0.3])
    v = fmap(np.array([0.5, 0.5, 0.0]))
    np.testing.assert_allclose(fmap.gradient(c, v), rff_gradient(build_frequency_matrix(f, 0.7), c, v))
    phi, J = fmap.jacobian(c)
    for d in range(3):
        e = np.zeros(3)
        e[d] = 1e-6
        np.testing.assert_allclose(J[:, d], (fmap(c + e) - fmap(c - e)) / 2e-6, atol=1e-7)


finite = st.floats(-50, 50, allow_nan=False)


@given(st.integers(0, 2**32 - 1), st.lists(finite, min_size=3, max_size=3),
       st.floats(1e-3, 1e3))
def test_scale_covariance_and_conjugate_symmetry(seed, x, sigma):
    f = FrequencyFactors.draw(16, 3, seed)
    x = np.array(x)
    a = FeatureMap.from_factors(f, sigma)(x)
    b = FeatureMap.from_factors(f, 1.0)(x / sigma)
    np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(FeatureMap.from_factors(f, sigma)(-x), np.conj(a), atol=1e-12)
    np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-12)


def test_batch_and_single_shapes():
    fmap = FeatureMap.from_factors(FrequencyFactors.draw(7, 2, 0))
    assert fmap(np.zeros(2)).shape == (7,)
    assert fmap(np.zeros((3, 2))).shape == (3, 7)
    with pytest.raises(ValueError):
        fmap(np.zeros(3))
