"""Input checks shared by the public functions and estimators."""

from __future__ import annotations

import numbers

import numpy as np


class ConfigurationError(ValueError):
    """An estimator or sampler was configured inconsistently."""


def check_points(x, dim: int | None = None, name: str = "x", allow_nan: bool = False):
    """Return ``(X, single)`` where ``X`` is a float ``(m, d)`` array.

    ``single`` is True when the input was one point of shape ``(d,)``, so
    callers can squeeze their output back.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if arr.ndim == 0 or arr.ndim > 2:
        raise ValueError(f"{name} must be a point (d,) or a batch (m, d); got shape {arr.shape}")
    arr = np.atleast_2d(arr)
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"{name} has dimension {arr.shape[1]}, expected {dim}")
    if not allow_nan and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr, single


def check_samples(a, name: str = "samples") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty (n, d) matrix; got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_count(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_positive(value, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ConfigurationError(f"{name} must be a positive finite number, got {value}")
    return value
