"""Input validation helpers used at module boundaries."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DomainError


def check_radii(radii, *, allow_zero=True, name="radii"):
    """Return ``radii`` as a finite 1-D float array of nonnegative values."""
    arr = check_array(
        np.atleast_1d(np.asarray(radii, dtype=float)),
        ensure_2d=False,
        dtype=float,
        ensure_all_finite=True,
        ensure_min_samples=1,
        input_name=name,
    )
    if arr.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if allow_zero:
        if np.any(arr < 0):
            raise DomainError(f"{name} must be nonnegative")
    elif np.any(arr <= 0):
        raise DomainError(f"{name} must be strictly positive")
    return arr


def check_points(points, name="points"):
    """Return ``points`` as an ``(n, 3)`` float array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    arr = check_array(arr, dtype=float, ensure_all_finite=True, input_name=name)
    if arr.shape[1] != 3:
        raise DomainError(f"{name} must have 3 columns, got {arr.shape[1]}")
    return arr


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise DomainError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_nonnegative(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise DomainError(f"{name} must be a nonnegative finite number, got {value!r}")
    return value
