"""scikit-learn compatible wrapper around the tiered runtime model."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import model as rm
from .grid import LimitGrid


class TieredRuntimeRegressor(RegressorMixin, BaseEstimator):
    """Regress per-sample runtime on CPU limit with the tiered model family.

    The tier is chosen from the number of training rows. With
    ``warm_start=True`` a second call to :meth:`fit` starts from the
    previously fitted parameters, the way the nested modeling strategy does.

    Parameters
    ----------
    warm_start : bool, default=False
        Reuse ``model_`` from a previous fit as the starting point.

    Attributes
    ----------
    model_ : RuntimeModel
    residual_norm_ : float
    n_iter_ : int
    """

    def __init__(self, warm_start: bool = False):
        self.warm_start = warm_start

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_samples=1, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError(f"expected a single CPU-limit feature, got {X.shape[1]}")
        start = getattr(self, "model_", None) if self.warm_start else None
        result = rm.fit_curve(X[:, 0], y, warm_start=start)
        self.model_ = result.model
        self.residual_norm_ = result.residual_norm
        self.n_iter_ = result.n_iter
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return np.asarray(rm.evaluate(self.model_, X[:, 0]), dtype=float)

    def predict_limit(self, target_runtime, grid: LimitGrid) -> np.ndarray:
        """Smallest grid CPU limit predicted to meet each target runtime."""
        check_is_fitted(self, "model_")
        targets = np.atleast_1d(np.asarray(target_runtime, dtype=float))
        return np.array([rm.invert(self.model_, t, grid).limit for t in targets])
