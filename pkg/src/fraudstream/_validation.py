"""Input validation helpers shared by the estimators and metrics."""

import numpy as np

from .exceptions import DimensionError


def check_features(X, n_features=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D feature array, got {X.ndim}-D")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionError(f"expected {n_features} features, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise ValueError("features contain NaN or infinity")
    return X


def check_labels(y):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be 1-D")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (genuine) or 1 (fraud)")
    return y.astype(np.int64)


def check_scores(scores, name="scores"):
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if not np.isfinite(s).all():
        raise ValueError(f"{name} contain NaN or infinity")
    return s


def check_rng(rng):
    """Accept a Generator, a seed, or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
