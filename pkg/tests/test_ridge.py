import numpy as np
import pytest

from flatgp import ridge
from flatgp.ridge import EvaluationError


def brute_force_loocv(Z, yc, alpha):
    """Independent oracle: refit the ridge solve n times, one row held out.

    Standardization and centering stay fixed (they are part of the design),
    only the weights are refitted.
    """
    n, p = Z.shape
    errors = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        Zi = Z[keep]
        yi = yc[keep]
        w = np.linalg.solve(Zi.T @ Zi + alpha * np.eye(p), Zi.T @ yi)
        errors[i] = (yc[i] - Z[i] @ w) ** 2
    return errors


def test_null_model():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(8)
    phi = np.ones((8, 1))  # constant column -> all-zero after standardization
    model = ridge.fit(phi, y, alpha=0.1)
    assert np.allclose(model.weights, 0.0)
    assert np.allclose(model.predict(phi), y.mean())
    assert np.allclose(model.loocv_errors, (y - y.mean()) ** 2)
    assert np.allclose(model.leverages, 0.0)


def test_loocv_matches_brute_force():
    rng = np.random.default_rng(1)
    phi = rng.standard_normal((12, 3)) * np.array([1.0, 5.0, 0.2])
    y = rng.standard_normal(12)
    model = ridge.fit(phi, y, alpha=0.1)
    Z = model.feature_stats.apply(phi)
    oracle = brute_force_loocv(Z, y - y.mean(), 0.1)
    assert np.max(np.abs(model.loocv_errors - oracle)) < 1e-8


def test_infinite_regularization_limit():
    rng = np.random.default_rng(2)
    phi = rng.standard_normal((15, 4))
    y = rng.standard_normal(15)
    model = ridge.fit(phi, y, alpha=1e12)
    assert np.linalg.norm(model.weights) < 1e-6
    assert np.allclose(model.loocv_errors, (y - y.mean()) ** 2, atol=1e-6)


def test_predict_consistency():
    rng = np.random.default_rng(3)
    phi = rng.standard_normal((12, 3))
    y = rng.standard_normal(12)
    model = ridge.fit(phi, y, alpha=0.5)
    # a training row predicts its in-sample fitted value
    fitted = model.predict(phi)
    assert np.allclose(model.predict(phi[4:5]), fitted[4])
    # independent recomputation of the affine formula
    Z = (phi - model.feature_stats.means) / model.feature_stats.stds
    w = np.linalg.solve(
        Z.T @ Z + 0.5 * np.eye(3), Z.T @ (y - y.mean())
    )
    assert np.max(np.abs(fitted - (Z @ w + y.mean()))) < 1e-10


def test_predict_dimension_mismatch():
    model = ridge.fit(np.random.default_rng(4).standard_normal((6, 2)), np.arange(6.0))
    with pytest.raises(ValueError):
        model.predict(np.zeros((3, 5)))


def test_fit_validation():
    with pytest.raises(ValueError):
        ridge.fit(np.ones((5, 1)), np.arange(5.0), alpha=0.0)
    with pytest.raises(ValueError):
        ridge.fit(np.ones((1, 1)), np.ones(1))
    with pytest.raises(EvaluationError):
        ridge.fit(np.array([[1.0], [np.inf]]), np.arange(2.0))


def test_leverage_bounds_and_trace():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(5, 30))
        p = int(rng.integers(1, 6))
        phi = rng.standard_normal((n, p))
        y = rng.standard_normal(n)
        alpha = float(rng.choice([1e-3, 0.1, 1.0]))
        model = ridge.fit(phi, y, alpha)
        assert np.all(model.leverages >= 0.0)
        assert np.all(model.leverages < 1.0)
        assert model.leverages.sum() <= p + 1e-9
        assert np.all(model.loocv_errors >= 0.0)


def test_monotone_regularization():
    rng = np.random.default_rng(6)
    phi = rng.standard_normal((25, 4))
    y = rng.standard_normal(25) + phi[:, 0]
    target_variance = np.mean((y - y.mean()) ** 2)
    means = [ridge.fit(phi, y, a).loocv_errors.mean() for a in (1e3, 1e6, 1e9)]
    assert abs(means[-1] - target_variance) < 1e-4 * max(1.0, target_variance)


def test_constant_feature_harmless():
    rng = np.random.default_rng(7)
    phi = np.column_stack([rng.standard_normal(10), np.full(10, 3.0)])
    y = rng.standard_normal(10)
    model = ridge.fit(phi, y, alpha=0.1)
    assert model.weights[1] == 0.0
    assert np.all(np.isfinite(model.loocv_errors))
