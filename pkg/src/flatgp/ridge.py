"""L2-regularized linear model on constructed features with closed-form LOOCV.

Features are z-scored with train statistics and the target is centered, so
the intercept is realized by adding the target mean back at prediction time.
With weights w = (Z'Z + aI)^-1 Z'y and leverages h = diag(Z (Z'Z + aI)^-1 Z'),
the leave-one-out squared errors come out as ((y - Zw) / (1 - h))^2 without
any refitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import StandardizationStats, column_stats

DEFAULT_ALPHA = 0.1


class EvaluationError(ValueError):
    """Raised when a feature matrix cannot be fitted (non-finite entries)."""


@dataclass
class FittedRidgeModel:
    weights: np.ndarray  # per standardized feature
    target_mean: float
    alpha: float
    feature_stats: StandardizationStats
    loocv_errors: np.ndarray  # per-instance squared errors
    leverages: np.ndarray

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def predict(self, Phi_new: np.ndarray) -> np.ndarray:
        return predict(self, Phi_new)

    def predict_centered(self, Phi_new: np.ndarray) -> np.ndarray:
        """Prediction on the centered scale (target mean not added back)."""
        Phi_new = np.asarray(Phi_new, dtype=np.float64)
        if Phi_new.ndim != 2 or Phi_new.shape[1] != self.n_features:
            raise ValueError(
                f"expected {self.n_features} feature columns, "
                f"got shape {Phi_new.shape}"
            )
        return self.feature_stats.apply(Phi_new) @ self.weights


def fit(Phi: np.ndarray, Y: np.ndarray, alpha: float = DEFAULT_ALPHA) -> FittedRidgeModel:
    """Fit ridge weights, leverages and LOOCV errors on constructed features."""
    Phi = np.asarray(Phi, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Phi.ndim != 2 or Phi.shape[0] != Y.shape[0]:
        raise ValueError("Phi must be (n, p) with one row per target value")
    if Phi.shape[0] < 2 or Phi.shape[1] < 1:
        raise ValueError("need n >= 2 instances and p >= 1 features")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if not np.all(np.isfinite(Phi)):
        raise EvaluationError("non-finite feature value")

    stats = column_stats(Phi)
    Z = stats.apply(Phi)
    ybar = float(Y.mean())
    yc = Y - ybar

    p = Z.shape[1]
    gram = Z.T @ Z + alpha * np.eye(p)
    chol = cho_factor(gram, lower=True)
    w = cho_solve(chol, Z.T @ yc)
    # h_i = z_i' (Z'Z + aI)^-1 z_i, strictly < 1 for alpha > 0
    B = cho_solve(chol, Z.T)
    h = np.einsum("ij,ji->i", Z, B)
    resid = yc - Z @ w
    e = (resid / (1.0 - h)) ** 2
    return FittedRidgeModel(
        weights=w,
        target_mean=ybar,
        alpha=float(alpha),
        feature_stats=stats,
        loocv_errors=e,
        leverages=h,
    )


def predict(model: FittedRidgeModel, Phi_new: np.ndarray) -> np.ndarray:
    """Affine prediction: standardized features times weights plus target mean."""
    return model.predict_centered(Phi_new) + model.target_mean
