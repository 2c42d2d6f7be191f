import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surfdiff.errors import ArgumentError, NumericError
from surfdiff.evalprobe import evaluate, features, fit_ridge, score
from surfdiff.patching import MetricMap, build_patch_table

T31 = build_patch_table(3, 1)


def test_features_constant_and_shape():
    f = features(MetricMap(3, np.full(642, 2.5)), T31)
    assert f.shape == (80,)
    np.testing.assert_allclose(f, 2.5)


@settings(max_examples=20, deadline=None)
@given(st.floats(-10, 10), st.integers(0, 100))
def test_features_linear(a, seed):
    x = np.random.default_rng(seed).standard_normal(642)
    np.testing.assert_allclose(features(a * x, T31), a * features(x, T31), atol=1e-9)


def test_single_patch_hand_mean():
    x = np.random.default_rng(1).standard_normal(642).astype(np.float32)
    idx = T31.patches[17]
    hand = sum(float(x[i]) for i in idx) / 15
    assert features(MetricMap(3, x), T31)[17] == pytest.approx(hand, abs=1e-9)


def test_spread_features():
    x = np.random.default_rng(2).standard_normal(642)
    np.testing.assert_allclose(features(x, T31, "spread"), np.log(x[T31.patches].var(axis=1) + 1e-6))
    with pytest.raises(ArgumentError):
        features(x, T31, "median")
    with pytest.raises(ArgumentError):
        features(MetricMap(2, np.zeros(162)), T31)


def test_exact_linear_recovery():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 5))
    w = np.array([1.0, -2.0, 0.5, 3.0, 0.0])
    y = X @ w + 7.0
    probe = fit_ridge(X, y, lam=0.0)
    np.testing.assert_allclose(probe.coef, w, atol=1e-8)
    assert probe.intercept == pytest.approx(7.0, abs=1e-8)


def test_huge_lambda_gives_mean():
    rng = np.random.default_rng(1)
    X, y = rng.standard_normal((30, 4)), rng.standard_normal(30)
    probe = fit_ridge(X, y, lam=1e9)
    assert np.abs(probe.weights[:-1]).max() < 1e-6
    np.testing.assert_allclose(probe.predict(X), y.mean(), atol=1e-6)


def test_two_point_hand_solution():
    # standardized column is [-1, 1]; w = (x.y_c) / (x.x + lam) = 1 / 3
    probe = fit_ridge(np.array([[1.0], [2.0]]), np.array([1.0, 2.0]), lam=1.0)
    assert abs(probe.weights[0] - 1 / 3) < 1e-10
    assert abs(probe.weights[1] - 1.5) < 1e-10
    np.testing.assert_allclose(probe.predict(np.array([[1.0], [2.0]])), [1.5 - 1 / 3, 1.5 + 1 / 3], atol=1e-10)


def test_singular_without_ridge():
    X = np.ones((5, 2))
    X[:, 1] = np.arange(5)
    X = np.hstack([X, X[:, 1:2]])  # duplicated column
    with pytest.raises(NumericError):
        fit_ridge(X, np.arange(5.0), lam=0.0)


def test_score_examples():
    assert score(np.array([30.0, 40.0]), np.array([32.0, 38.0])) == pytest.approx(
        {"mae": 2.0, "mae_sd": 0.0, "r2": 1 - 8 / 18}
    )
    y = np.array([1.0, 2.0, 4.0])
    assert score(y, y)["mae"] == 0.0 and score(y, y)["r2"] == 1.0
    assert score(np.full(3, y.mean()), y)["r2"] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ArgumentError):
        score(np.ones(3), np.ones(3))


def test_evaluate_uses_probe():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([1.0, 3.0, 5.0, 7.0])
    probe = fit_ridge(X, y, lam=0.0)
    assert evaluate(probe, X, y)["mae"] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ArgumentError):
        evaluate(probe, X[:1], y[:1])
