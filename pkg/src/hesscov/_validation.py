"""Input checks shared by the estimators."""

import numpy as np
from sklearn.exceptions import NotFittedError

from .exceptions import SpecError


def check_time_series(t, y, min_samples=3):
    """Return ``(t, y)`` as finite 1-d float arrays of equal length."""
    t = np.asarray(t, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if t.shape != y.shape:
        raise SpecError(f"t and y lengths differ: {t.size} != {y.size}")
    if t.size < min_samples:
        raise SpecError(f"need at least {min_samples} samples, got {t.size}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise SpecError("t and y must be finite")
    if np.any(np.diff(t) <= 0):
        raise SpecError("sample times must be strictly increasing")
    return t, y


def check_uniform_spacing(t, rtol=1e-6):
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=rtol, atol=0):
        raise SpecError("sample times must be uniformly spaced")
    return float(dt[0])


def check_positive(name, value, allow_none=False):
    if value is None and allow_none:
        return None
    if not (np.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be positive, got {value!r}")
    return float(value)


def check_fitted(estimator, attribute='solution_'):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit first")
